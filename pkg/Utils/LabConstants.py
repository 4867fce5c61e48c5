DEFAULT_OUT_DIR="out"
DIAGNOSTICS_FILE="diagnostics.csv"
ANALYZE_FILE="analyze.csv"
EPSILON_FILE="epsilon_study.csv"
VERIFY_FILE="verify.txt"
PLOT_DIR="plots"
PLOT_DRIVER="plot_diagnostics.gp"
SNAPSHOT_DIR="snapshots"
EXIT_OK=0
EXIT_CONFIG=1
EXIT_VIOLATED=2
EXIT_INCONCLUSIVE=3
EXIT_IO=4
