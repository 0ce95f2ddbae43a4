"""Entry point: `python main.py <command>` runs the CLI; without arguments it serves the API."""
import sys

from app.cli import cli

if __name__ == "__main__":
    # Sin argumentos: servir la API en el puerto que asigne la nube (PORT) o 10000
    cli(sys.argv[1:] or ["serve"], prog_name="lfc")
