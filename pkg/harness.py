import argparse
import logging
import sys

from config import LOG_LEVEL

# Configuración de logging (stderr; stdout queda para el resumen del comando)
logging.basicConfig(
    format="%(asctime)s - %(name)s - %(levelname)s - %(message)s",
    level=getattr(logging, LOG_LEVEL, logging.INFO)
)
logger = logging.getLogger(__name__)

# Importar comandos
from handlers.common import EXIT_USAGE_ERROR
from handlers.gradsim import register_gradsim_command
from handlers.synth import register_synth_command
from handlers.assign import register_assign_command
from handlers.detect import register_detect_command
from handlers.froc import register_froc_command


def build_parser():
    parser = argparse.ArgumentParser(
        prog="harness",
        description="Pérdidas de esfera, asignación por puntos centrales, NMS y FROC",
    )
    subparsers = parser.add_subparsers(dest="command", required=True)

    register_gradsim_command(subparsers)
    register_synth_command(subparsers)
    register_assign_command(subparsers)
    register_detect_command(subparsers)
    register_froc_command(subparsers)
    return parser


def main(argv=None):
    """Ejecuta un comando y devuelve su código de salida"""
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return e.code if isinstance(e.code, int) else EXIT_USAGE_ERROR

    logger.debug(f"Comando: {args.command}")
    return args.handler(args)


if __name__ == "__main__":
    sys.exit(main())
