"""Command-line front door: one function per subcommand."""
