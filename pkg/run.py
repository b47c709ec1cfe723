#!/usr/bin/env python3
"""
Graph Kernel Reconstruction - Quick Start Script

Run this script to start the API server:
    python run.py

The command line toolkit is available as:
    python -m graphkernel --help
"""
import os
import sys

import uvicorn

# Add the project root to Python path
sys.path.insert(0, os.path.dirname(os.path.abspath(__file__)))

from graphkernel.config import get_settings


def main():
    """Start the graph kernel reconstruction server"""
    settings = get_settings()

    print("""
    ╔═══════════════════════════════════════════════════════════╗
    ║                                                           ║
    ║   🕸️  Graph Kernel Reconstruction                          ║
    ║                                                           ║
    ║   Starting server...                                      ║
    ║                                                           ║
    ╚═══════════════════════════════════════════════════════════╝
    """)

    print(f"   📖 API Docs:   http://localhost:{settings.port}/docs")
    print(f"   🗄️  Reports:    {settings.database_url}")
    print(f"   🧵 Threads:    {settings.threads}")
    print()
    print("   Press Ctrl+C to stop the server")
    print()

    uvicorn.run(
        "graphkernel.main:app",
        host=settings.host,
        port=settings.port,
        reload=settings.debug,
        log_level=settings.log_level.lower()
    )


if __name__ == "__main__":
    main()
