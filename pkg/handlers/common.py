import logging
import os

from config import DATA_DIR, ConfigError, load_config
from core.losses import ClsMode

# Logger
logger = logging.getLogger(__name__)

# Códigos de salida
EXIT_OK = 0
EXIT_INPUT_ERROR = 1
EXIT_USAGE_ERROR = 2

# Opción de línea de comandos -> campo de HarnessConfig
_CONFIG_FLAGS = {
    "k": "K",
    "n": "n",
    "lambda_s": "lambda_s",
    "top_n": "top_n",
    "t": "t",
    "w": "w",
    "beta": "beta",
    "alpha": "alpha",
    "gamma": "gamma",
    "cls_mode": "cls_mode",
    "tau_siou": "tau_siou",
    "tau_dr": "tau_dr",
    "dims": "dims",
    "stride": "stride",
    "seed": "seed",
}


def add_config_arguments(parser):
    """Opciones de configuración comunes a todos los comandos (None = no dada)"""
    group = parser.add_argument_group("configuración")
    group.add_argument("--config", metavar="PATH", help="Archivo JSON de configuración")
    group.add_argument("--k", type=int, help="Puntos positivos por nódulo (K)")
    group.add_argument("--n", type=int, help="Negativos por positivo en OHEM")
    group.add_argument("--lambda-s", dest="lambda_s", type=float, help="Peso del término SIoU++")
    group.add_argument("--top-n", dest="top_n", type=int, help="Candidatos por rejilla antes de NMS")
    group.add_argument("--t", type=float, help="Umbral de confianza de la pérdida re-focal")
    group.add_argument("--w", type=float, help="Peso de positivos poco confiables")
    group.add_argument("--beta", type=float, help="Beta de la pérdida de radio")
    group.add_argument("--alpha", type=float, help="Alpha de la pérdida focal")
    group.add_argument("--gamma", type=float, help="Gamma de la pérdida focal")
    group.add_argument("--cls-mode", dest="cls_mode", choices=[m.value for m in ClsMode],
                       help="Pérdida de clasificación")
    group.add_argument("--tau-siou", dest="tau_siou", type=float, help="Umbral SIoU de NMS")
    group.add_argument("--tau-dr", dest="tau_dr", type=float, help="Umbral R_DR de NMS")
    group.add_argument("--dims", type=int, nargs=3, metavar=("D", "H", "W"), help="Dimensiones de la rejilla")
    group.add_argument("--stride", type=int, help="Paso de la rejilla en vóxeles")
    group.add_argument("--seed", type=int, help="Semilla aleatoria")


def resolve_config(args):
    """
    Configuración efectiva a partir de los argumentos

    Raises:
        ConfigError: Si el archivo o algún valor es inválido
    """
    overrides = {field: getattr(args, flag, None) for flag, field in _CONFIG_FLAGS.items()}
    config = load_config(getattr(args, "config", None), overrides)
    logger.debug(f"Configuración efectiva: {config.to_dict()}")
    return config


def output_path(path, default_name):
    """Ruta de salida; sin ruta explícita se usa DATA_DIR"""
    return path if path else os.path.join(DATA_DIR, default_name)


def report_failure(action, error):
    """
    Registra y muestra un error de comando

    Returns:
        int: Código de salida (2 para configuración, 1 para entradas)
    """
    logger.error(f"Error al {action}: {error}")
    print(f"❌ Error al {action}: {error}")
    return EXIT_USAGE_ERROR if isinstance(error, ConfigError) else EXIT_INPUT_ERROR
