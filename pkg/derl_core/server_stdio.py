"""Stdio transport for local MCP clients.

Usage:
    python -m derl_core.server_stdio

Environment Variables (optional):
    DERL_HOME - Root for datasets, runs and reports (default: ./derl_runs)
    DERL_WORKERS - Sweep worker processes (default: 1)
    DERL_DEBUG - Check every tensor op for non-finite values
    DERL_LOG_LEVEL - Logging level (default: INFO)
    DERL_LOG_FILE - Log file path with rotation
"""

from .server import server


def main():
    """Run the MCP server using stdio transport."""
    server.run(transport="stdio")


if __name__ == "__main__":
    main()
