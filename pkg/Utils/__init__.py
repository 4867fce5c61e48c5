"""Command-line tooling, configuration introspection and plot export for the lab."""
