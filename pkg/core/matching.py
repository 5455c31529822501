import logging
from dataclasses import dataclass, field, replace

import numpy as np

from core.sphere_geometry import Point3, Sphere, GeometryError

# Logger
logger = logging.getLogger(__name__)

# Etiquetas por celda
POSITIVE = 1
NEGATIVE = 0
IGNORED = -1

# Negativos que conserva OHEM cuando la imagen no tiene positivos
EMPTY_SCAN_NEGATIVES = 100

# Anillo ignorado: radio del nódulo + este número de celdas
IGNORE_RING_CELLS = 2


class MatchingError(ValueError):
    """Parámetros de asignación inconsistentes"""


@dataclass(frozen=True)
class GridSpec:
    """Rejilla submuestreada (D', H', W') con paso R en vóxeles del mundo"""
    dims: tuple
    stride: int

    def __post_init__(self):
        dims = tuple(int(v) for v in self.dims)
        if len(dims) != 3 or any(v < 1 for v in dims):
            raise MatchingError(f"Dimensiones de rejilla inválidas: {self.dims}")
        if int(self.stride) < 1:
            raise MatchingError(f"Paso de rejilla inválido: {self.stride}")
        object.__setattr__(self, "dims", dims)
        object.__setattr__(self, "stride", int(self.stride))

    @property
    def size(self):
        d, h, w = self.dims
        return d * h * w

    def cell_centers(self):
        """Centros de celda en el mundo, forma (D, H, W, 3) en orden (x, y, z)"""
        iz, iy, ix = np.indices(self.dims, dtype=np.float64)
        r = float(self.stride)
        return np.stack([(ix + 0.5) * r, (iy + 0.5) * r, (iz + 0.5) * r], axis=-1)

    def contains(self, cell):
        return len(cell) == 3 and all(0 <= int(c) < n for c, n in zip(cell, self.dims))


@dataclass(frozen=True)
class NoduleAnnotation:
    """Nódulo anotado: centroide y radio en vóxeles del mundo"""
    center: Point3
    radius: float
    id: str = ""

    def __post_init__(self):
        if not self.radius > 0:
            raise GeometryError(f"Radio de nódulo inválido: {self.radius}")

    def as_sphere(self):
        return Sphere(self.center, float(self.radius))


@dataclass
class LabelAssignment:
    """
    Etiquetas por celda y objetivos de regresión

    labels usa POSITIVE / NEGATIVE / IGNORED; matched guarda el índice del
    nódulo (en el orden de nodule_ids) o -1. Los objetivos están en unidades
    de rejilla y valen NaN fuera de las celdas positivas.
    """
    grid: GridSpec
    labels: np.ndarray
    matched: np.ndarray
    nodule_ids: tuple = ()
    radius_target: np.ndarray = field(default=None)
    offset_target: np.ndarray = field(default=None)

    def __post_init__(self):
        if self.radius_target is None:
            self.radius_target = np.full(self.grid.dims, np.nan)
        if self.offset_target is None:
            self.offset_target = np.full((3,) + self.grid.dims, np.nan)

    @property
    def positive_count(self):
        return int(np.count_nonzero(self.labels == POSITIVE))

    def counts(self):
        return {
            "positive": self.positive_count,
            "negative": int(np.count_nonzero(self.labels == NEGATIVE)),
            "ignored": int(np.count_nonzero(self.labels == IGNORED)),
        }

    def positive_cells(self, nodule_index):
        """Índices lineales de las celdas positivas de un nódulo"""
        flat = self.matched.ravel()
        return np.flatnonzero((self.labels.ravel() == POSITIVE) & (flat == nodule_index))

    def matched_nodule(self, cell):
        idx = int(self.matched[tuple(cell)])
        return self.nodule_ids[idx] if idx >= 0 else None

    def copy(self):
        return replace(
            self,
            labels=self.labels.copy(),
            matched=self.matched.copy(),
            radius_target=self.radius_target.copy(),
            offset_target=self.offset_target.copy(),
        )


def distance_map(grid: GridSpec, centroid: Point3) -> np.ndarray:
    """Distancia de cada centro de celda al centroide, forma grid.dims"""
    centers = grid.cell_centers()
    diff = centers - np.array(centroid.as_tuple())
    return np.sqrt(np.sum(diff * diff, axis=-1))


def assign_labels(grid: GridSpec, nodules, K: int = 7) -> LabelAssignment:
    """
    Asignación por puntos centrales (pasos 1-3, antes de OHEM)

    Los nódulos se recorren en orden de lista. Para cada uno se toman las K
    celdas libres más cercanas (empates por índice lineal ascendente); las
    celdas dentro de radio + 2R que no son positivas quedan ignoradas.
    Una celda positiva nunca cambia de nódulo ni de etiqueta.

    Args:
        grid (GridSpec): Rejilla de salida
        nodules (list): Lista de NoduleAnnotation
        K (int): Puntos positivos por nódulo

    Returns:
        LabelAssignment: Asignación sin objetivos de regresión
    """
    if K < 1:
        raise MatchingError(f"K debe ser >= 1: {K}")
    if K > grid.size:
        raise MatchingError(f"K={K} excede el número de celdas ({grid.size})")

    labels = np.full(grid.size, NEGATIVE, dtype=np.int8)
    matched = np.full(grid.size, -1, dtype=np.int32)
    ring_extra = IGNORE_RING_CELLS * grid.stride

    for gi, nodule in enumerate(nodules):
        dist = distance_map(grid, nodule.center).ravel()
        order = np.argsort(dist, kind="stable")
        free = order[labels[order] != POSITIVE]
        chosen = free[:K]
        if len(chosen) < K:
            logger.debug(f"Nódulo {nodule.id}: solo {len(chosen)} celdas libres")
        labels[chosen] = POSITIVE
        matched[chosen] = gi

        ring = (dist <= nodule.radius + ring_extra) & (labels != POSITIVE)
        labels[ring] = IGNORED

    return LabelAssignment(
        grid=grid,
        labels=labels.reshape(grid.dims),
        matched=matched.reshape(grid.dims),
        nodule_ids=tuple(n.id for n in nodules),
    )


def ohem_refine(assignment: LabelAssignment, per_cell_cls_loss, n: int = 100) -> LabelAssignment:
    """
    Minería de negativos difíciles

    Conserva los N negativos de mayor pérdida (N = n*M, o 100 si M = 0) y
    pasa el resto de negativos a ignorados.
    """
    loss = np.asarray(per_cell_cls_loss, dtype=np.float64)
    if loss.shape != assignment.grid.dims:
        raise MatchingError(f"Mapa de pérdida {loss.shape} no coincide con {assignment.grid.dims}")

    result = assignment.copy()
    labels = result.labels.reshape(-1)
    neg_idx = np.flatnonzero(labels == NEGATIVE)
    values = loss.ravel()[neg_idx]
    if not np.all(np.isfinite(values)):
        raise MatchingError("Pérdida no finita en celdas negativas")

    m = assignment.positive_count
    n_keep = n * m if m > 0 else EMPTY_SCAN_NEGATIVES
    n_keep = min(n_keep, len(neg_idx))

    # Orden: pérdida descendente, luego índice lineal ascendente
    order = np.lexsort((neg_idx, -values))
    demoted = neg_idx[order[n_keep:]]
    labels[demoted] = IGNORED
    logger.debug(f"OHEM: M={m}, negativos conservados={n_keep}, reasignados={len(demoted)}")
    return result


def regression_targets(grid: GridSpec, assignment: LabelAssignment, nodules) -> LabelAssignment:
    """Rellena offset y radio objetivo (unidades de rejilla) en las celdas positivas"""
    if len(nodules) != len(assignment.nodule_ids):
        raise MatchingError(
            f"Se esperaban {len(assignment.nodule_ids)} nódulos, se recibieron {len(nodules)}"
        )
    result = assignment.copy()
    pos = np.flatnonzero(result.labels.ravel() == POSITIVE)
    if len(pos) == 0:
        return result

    r = float(grid.stride)
    m = result.matched.ravel()[pos]
    if np.any(m < 0):
        raise MatchingError("Celda positiva sin nódulo asignado")

    centers = np.array([nod.center.as_tuple() for nod in nodules], dtype=np.float64)
    radii = np.array([nod.radius for nod in nodules], dtype=np.float64)
    iz, iy, ix = np.unravel_index(pos, grid.dims)

    offset = result.offset_target.reshape(3, -1)
    offset[0, pos] = centers[m, 0] / r - (ix + 0.5)
    offset[1, pos] = centers[m, 1] / r - (iy + 0.5)
    offset[2, pos] = centers[m, 2] / r - (iz + 0.5)
    result.radius_target.reshape(-1)[pos] = radii[m] / r
    return result


def assign_and_mine(grid: GridSpec, nodules, K: int = 7, cls_loss=None, n: int = 100) -> LabelAssignment:
    """Los cuatro pasos completos: asignación, OHEM opcional y objetivos"""
    assignment = assign_labels(grid, nodules, K)
    if cls_loss is not None:
        assignment = ohem_refine(assignment, cls_loss, n)
    return regression_targets(grid, assignment, nodules)
