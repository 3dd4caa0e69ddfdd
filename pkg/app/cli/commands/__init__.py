"""
One module per subcommand.
"""
