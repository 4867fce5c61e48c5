import logging
from pathlib import Path
from typing import List, Optional, Sequence, Union

from AALab.Constants import FIELD_T
from AALab.Errors import AALabError
from AALab.Monitors import COLUMNS, DiagnosticSeries
from Utils.LabConstants import PLOT_DRIVER

logger = logging.getLogger(__name__)

DRIVER_TEMPLATE = """# gnuplot driver for diagnostics of run {config_hash}
{stanza}set terminal pngcairo size 900,600
set xlabel "t"
set grid
"""


def emit_plot_data(series: DiagnosticSeries, out_dir: Union[str, Path],
                   columns: Optional[Sequence[str]] = None, stanza: Optional[Sequence[str]] = None) -> List[Path]:
    """Write one two-column ``<column>.dat`` file per requested diagnostic plus a gnuplot driver.

    Args:
        series: A nonempty diagnostic series.
        out_dir: Target directory (created if absent).
        columns: Diagnostic columns to emit; None means every column except t.
        stanza: Reproducibility lines for the file headers and the driver;
            None means the stanza of ``series.metadata``.

    Returns:
        List[Path]: The data files written (the driver is not included).
    """
    if len(series) == 0:
        raise AALabError("cannot emit plot data for an empty series")
    requested = [name for name in COLUMNS if name != FIELD_T] if columns is None else list(columns)
    unknown = [name for name in requested if name not in COLUMNS or name == FIELD_T]
    if unknown:
        raise AALabError(f"unknown plot column(s) {unknown}")
    if not requested:
        logger.warning("No diagnostic columns requested; no plot files written")
        return []

    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    lines = series.metadata.stanza() if stanza is None else list(stanza)
    header = "".join(f"# {line}\n" for line in lines)
    times = series.times()
    written = []
    driver = [DRIVER_TEMPLATE.format(config_hash=series.metadata.config_hash or "unknown", stanza=header)]
    for name in requested:
        values = series.column(name)
        path = out_dir / f"{name}.dat"
        with path.open("w", encoding="utf-8", newline="\n") as handle:
            handle.write(header)
            handle.write(f"# t {name}\n")
            for t, value in zip(times, values):
                handle.write(f"{t!r} {float(value)!r}\n")
        written.append(path)
        driver.append(f'set output "{name}.png"\nset ylabel "{name}"\nplot "{name}.dat" using 1:2 with linespoints '
                      f'title "{name}"\n')
    (out_dir / PLOT_DRIVER).write_text("".join(driver), encoding="utf-8")
    logger.info("Wrote %d plot data files to %s", len(written), out_dir)
    return written
