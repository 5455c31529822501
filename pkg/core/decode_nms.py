import logging
from dataclasses import dataclass
from functools import reduce

import numpy as np

from core.sphere_geometry import Sphere, siou, distance_radius_ratio
from core.matching import GridSpec

# Logger
logger = logging.getLogger(__name__)


class GridError(ValueError):
    """Mapas de predicción inconsistentes"""


@dataclass
class PredictionGrid:
    """
    Salida de un nivel: M_C (probabilidad), M_R (radio) y M_O (offset)

    M_R y M_O están en unidades de rejilla; M_O tiene forma (3,) + dims con
    canales en orden (x, y, z).
    """
    spec: GridSpec
    center_prob: np.ndarray
    radius: np.ndarray
    offset: np.ndarray
    level: int = 1

    def __post_init__(self):
        dims = self.spec.dims
        self.center_prob = np.asarray(self.center_prob, dtype=np.float64)
        self.radius = np.asarray(self.radius, dtype=np.float64)
        self.offset = np.asarray(self.offset, dtype=np.float64)
        if self.center_prob.shape != dims or self.radius.shape != dims:
            raise GridError(f"M_C {self.center_prob.shape} / M_R {self.radius.shape} no coinciden con {dims}")
        if self.offset.shape != (3,) + dims:
            raise GridError(f"M_O {self.offset.shape} no coincide con {(3,) + dims}")
        p = self.center_prob
        if not np.all(np.isfinite(p)) or np.any(p < 0.0) or np.any(p > 1.0):
            raise GridError("Probabilidades de M_C fuera de [0, 1]")


@dataclass(frozen=True)
class Candidate:
    """Esfera detectada en el mundo con su puntaje"""
    sphere: Sphere
    score: float
    level: int = 1
    cell: int = 0

    def __post_init__(self):
        if not 0.0 <= self.score <= 1.0:
            raise GridError(f"Puntaje fuera de [0, 1]: {self.score}")


@dataclass(frozen=True)
class NmsParams:
    tau_siou: float = 0.05
    tau_dr: float = 0.5

    def __post_init__(self):
        if not 0.0 <= self.tau_siou <= 1.0:
            raise GridError(f"tau_siou fuera de [0, 1]: {self.tau_siou}")
        if not 0.0 < self.tau_dr <= 1.0:
            raise GridError(f"tau_dr fuera de (0, 1]: {self.tau_dr}")


@dataclass
class DecodeStats:
    dropped: int = 0


def _orden(c: Candidate):
    # Puntaje descendente; empates por celda, nivel y geometría
    center = c.sphere.center
    return (-c.score, c.cell, c.level, center.x, center.y, center.z, c.sphere.radius)


def decode_cell(grid: PredictionGrid, cell):
    """
    Decodifica una celda (iz, iy, ix) a una esfera en el mundo

    Centro = (x + 0.5 + v) * R, radio = M_R * R. Devuelve None si el radio
    decodificado no es positivo.
    """
    if not grid.spec.contains(cell):
        raise GridError(f"Celda {tuple(cell)} fuera de {grid.spec.dims}")
    iz, iy, ix = (int(c) for c in cell)
    r_grid = float(grid.radius[iz, iy, ix])
    if not r_grid > 0:
        logger.debug(f"Celda {(iz, iy, ix)} con radio no positivo ({r_grid}); descartada")
        return None

    stride = float(grid.spec.stride)
    v = grid.offset[:, iz, iy, ix]
    sphere = Sphere.of(
        (ix + 0.5 + v[0]) * stride,
        (iy + 0.5 + v[1]) * stride,
        (iz + 0.5 + v[2]) * stride,
        r_grid * stride,
    )
    flat = int(np.ravel_multi_index((iz, iy, ix), grid.spec.dims))
    return Candidate(sphere, float(grid.center_prob[iz, iy, ix]), grid.level, flat)


def top_n_candidates(grid: PredictionGrid, n: int = 100, stats: DecodeStats = None):
    """Las n celdas de mayor M_C (empates por índice lineal), decodificadas"""
    if n < 1:
        raise GridError(f"n debe ser >= 1: {n}")
    order = np.argsort(-grid.center_prob.ravel(), kind="stable")[:n]
    candidates = []
    for flat in order:
        candidate = decode_cell(grid, np.unravel_index(flat, grid.spec.dims))
        if candidate is None:
            if stats is not None:
                stats.dropped += 1
            continue
        candidates.append(candidate)
    return candidates


def merge_levels(a, b):
    """Concatena candidatos de dos niveles y reordena por puntaje descendente"""
    return sorted(list(a) + list(b), key=_orden)


def _suppresses(kept: Candidate, other: Candidate, params: NmsParams):
    return (siou(kept.sphere, other.sphere) > params.tau_siou
            or distance_radius_ratio(kept.sphere, other.sphere) < params.tau_dr)


def nms_siou(candidates, params: NmsParams = NmsParams()):
    """
    NMS voraz con SIoU y R_DR

    Se acepta el mejor candidato restante y se suprime todo candidato con
    SIoU > tau_siou o R_DR < tau_dr respecto a él.
    """
    kept = []
    for candidate in sorted(candidates, key=_orden):
        if any(_suppresses(k, candidate, params) for k in kept):
            continue
        kept.append(candidate)
    return kept


def candidates_from_grids(grids, top_n: int = 100):
    """Top-n de cada rejilla de un mismo escáner, fusionados entre niveles"""
    stats = DecodeStats()
    per_grid = [top_n_candidates(g, top_n, stats) for g in grids]
    merged = reduce(merge_levels, per_grid, [])
    if stats.dropped:
        logger.debug(f"{stats.dropped} celdas descartadas por radio no positivo")
    return merged, stats
