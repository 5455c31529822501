import json
import os
from dataclasses import dataclass, field, asdict

from dotenv import load_dotenv

from core.decode_nms import NmsParams
from core.losses import FocalParams, ClsMode
from core.matching import GridSpec

# Cargar variables de entorno desde archivo .env (si existe)
load_dotenv()

# Directorio de salida por defecto de los comandos
DATA_DIR = os.getenv("SCPM_DATA_DIR", os.path.join(os.path.dirname(os.path.abspath(__file__)), "data"))

# Nivel de logging
LOG_LEVEL = os.getenv("SCPM_LOG_LEVEL", "INFO").upper()

# Parámetros por defecto (búsqueda en rejilla sobre validación)
DEFAULT_K = 7
DEFAULT_LAMBDA_S = 2.0
DEFAULT_OHEM_RATIO = 100
DEFAULT_TOP_N = 100
DEFAULT_T = 0.9
DEFAULT_W = 4.0
DEFAULT_BETA = 1.0 / 9.0
DEFAULT_ALPHA = 0.375
DEFAULT_GAMMA = 2.0
DEFAULT_CLS_MODE = ClsMode.REFOCAL.value

# NMS: umbrales propios (no publicados)
DEFAULT_TAU_SIOU = 0.05
DEFAULT_TAU_DR = 0.5

# Parche de 96^3 con paso 4
DEFAULT_GRID_DIMS = (24, 24, 24)
DEFAULT_STRIDE = 4
DEFAULT_SEED = 0


class ConfigError(ValueError):
    """Configuración inválida"""


@dataclass
class HarnessConfig:
    K: int = DEFAULT_K
    n: int = DEFAULT_OHEM_RATIO
    lambda_s: float = DEFAULT_LAMBDA_S
    top_n: int = DEFAULT_TOP_N
    t: float = DEFAULT_T
    w: float = DEFAULT_W
    beta: float = DEFAULT_BETA
    alpha: float = DEFAULT_ALPHA
    gamma: float = DEFAULT_GAMMA
    cls_mode: str = DEFAULT_CLS_MODE
    nms: NmsParams = field(default_factory=lambda: NmsParams(DEFAULT_TAU_SIOU, DEFAULT_TAU_DR))
    grid: GridSpec = field(default_factory=lambda: GridSpec(DEFAULT_GRID_DIMS, DEFAULT_STRIDE))
    seed: int = DEFAULT_SEED

    def focal_params(self):
        return FocalParams(self.alpha, self.gamma, self.t, self.w, ClsMode(self.cls_mode))

    def to_dict(self):
        """Configuración efectiva serializable a JSON"""
        data = asdict(self)
        data["grid"] = {"dims": list(self.grid.dims), "stride": self.grid.stride}
        data["nms"] = {"tau_siou": self.nms.tau_siou, "tau_dr": self.nms.tau_dr}
        return data


_SCALAR_FIELDS = ("K", "n", "lambda_s", "top_n", "t", "w", "beta", "alpha", "gamma", "cls_mode", "seed")
_INT_FIELDS = ("K", "n", "top_n", "seed")


def _flatten(data):
    """Acepta 'nms' y 'grid' anidados o sus claves planas"""
    flat = {}
    for key, value in data.items():
        if key == "nms" and isinstance(value, dict):
            flat.update(value)
        elif key == "grid" and isinstance(value, dict):
            flat.update(value)
        else:
            flat[key] = value
    return flat


def _validate(values):
    if values["K"] < 1:
        raise ConfigError(f"K debe ser >= 1: {values['K']}")
    if values["n"] < 1:
        raise ConfigError(f"n debe ser >= 1: {values['n']}")
    if values["top_n"] < 1:
        raise ConfigError(f"top_n debe ser >= 1: {values['top_n']}")
    if values["lambda_s"] < 0:
        raise ConfigError(f"lambda_s debe ser >= 0: {values['lambda_s']}")
    if not values["beta"] > 0:
        raise ConfigError(f"beta debe ser positivo: {values['beta']}")
    if values["cls_mode"] not in [m.value for m in ClsMode]:
        raise ConfigError(f"cls_mode desconocido: {values['cls_mode']}")


def load_config(path=None, overrides=None) -> HarnessConfig:
    """
    Resuelve la configuración efectiva

    Precedencia: opción de línea de comandos > archivo JSON > valor por defecto.

    Args:
        path (str, optional): Ruta del archivo JSON de configuración
        overrides (dict, optional): Valores de la línea de comandos (None = no dado)

    Returns:
        HarnessConfig: Configuración validada
    """
    defaults = HarnessConfig()
    values = {name: getattr(defaults, name) for name in _SCALAR_FIELDS}
    values.update(tau_siou=defaults.nms.tau_siou, tau_dr=defaults.nms.tau_dr,
                  dims=list(defaults.grid.dims), stride=defaults.grid.stride)

    if path:
        try:
            with open(path, "r", encoding="utf-8") as f:
                from_file = _flatten(json.load(f))
        except (OSError, json.JSONDecodeError) as e:
            raise ConfigError(f"No se pudo leer la configuración {path}: {e}")
        unknown = set(from_file) - set(values)
        if unknown:
            raise ConfigError(f"Claves desconocidas en {path}: {sorted(unknown)}")
        values.update(from_file)

    for key, value in (overrides or {}).items():
        if value is not None:
            if key not in values:
                raise ConfigError(f"Opción desconocida: {key}")
            values[key] = value

    try:
        for key in _INT_FIELDS:
            values[key] = int(values[key])
        for key in ("lambda_s", "t", "w", "beta", "alpha", "gamma"):
            values[key] = float(values[key])
        _validate(values)
        config = HarnessConfig(
            nms=NmsParams(float(values.pop("tau_siou")), float(values.pop("tau_dr"))),
            grid=GridSpec(tuple(values.pop("dims")), int(values.pop("stride"))),
            **values,
        )
        # Valida alpha, gamma, t y w
        config.focal_params()
        return config
    except (TypeError, ValueError) as e:
        if isinstance(e, ConfigError):
            raise
        raise ConfigError(f"Configuración inválida: {e}")
