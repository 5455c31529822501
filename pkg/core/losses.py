import logging
import math
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from core.sphere_geometry import (
    Sphere, DISJOINT, CONTAINED, INTERSECTING,
    center_distance, regime_of, lens_volume, angle_from,
)
from core.matching import LabelAssignment, POSITIVE, NEGATIVE, IGNORED

# Logger
logger = logging.getLogger(__name__)

# Límite de probabilidad antes del logaritmo
PROB_EPS = 1e-7

# Distancia a la frontera de régimen que activa la diferencia unilateral
BOUNDARY_TOL = 1e-9

# Radio mínimo durante el descenso y en esferas decodificadas para la pérdida
MIN_RADIUS = 1e-6


class LossInputError(ValueError):
    """Entradas de pérdida inconsistentes"""


class SphereLossKind(Enum):
    BOX_IOU = "box_iou"
    SIOU = "siou"
    SDIOU = "sdiou"
    SIOU_PP = "siou_pp"
    SIOU_ANGLE = "siou_angle"

    @classmethod
    def parse(cls, name):
        """Acepta el valor ('siou_pp') o el nombre corto ('SIoUpp', 'BoxIoU')"""
        key = name.strip().lower().replace("-", "_").replace("++", "pp")
        aliases = {
            "boxiou": cls.BOX_IOU, "iou": cls.BOX_IOU,
            "sioupp": cls.SIOU_PP, "siouangle": cls.SIOU_ANGLE,
        }
        for kind in cls:
            if key == kind.value:
                return kind
        if key in aliases:
            return aliases[key]
        raise LossInputError(f"Tipo de pérdida desconocido: {name}")


class ClsMode(Enum):
    REFOCAL = "refocal"
    FOCAL = "focal"
    BCE = "bce"


@dataclass(frozen=True)
class SphereGradient:
    d_cx: float
    d_cy: float
    d_cz: float
    d_r: float

    def as_array(self):
        return np.array([self.d_cx, self.d_cy, self.d_cz, self.d_r])

    @property
    def center_norm(self):
        return math.sqrt(self.d_cx ** 2 + self.d_cy ** 2 + self.d_cz ** 2)


@dataclass(frozen=True)
class FocalParams:
    alpha: float = 0.375
    gamma: float = 2.0
    t: float = 0.9
    w: float = 4.0
    mode: ClsMode = ClsMode.REFOCAL

    def __post_init__(self):
        if not self.alpha > 0:
            raise LossInputError(f"alpha debe ser positivo: {self.alpha}")
        if self.gamma < 0:
            raise LossInputError(f"gamma debe ser >= 0: {self.gamma}")
        if not 0 < self.t < 1:
            raise LossInputError(f"t debe estar en (0, 1): {self.t}")
        if not self.w > 0:
            raise LossInputError(f"w debe ser positivo: {self.w}")


@dataclass(frozen=True)
class LossBreakdown:
    cls: float
    radius: float
    offset: float
    siou_pp: float
    total: float


@dataclass
class DescentTrace:
    """Trayectoria del descenso: una entrada por iteración (incluida la inicial)"""
    kind: SphereLossKind
    d_ab: list = field(default_factory=list)
    loss: list = field(default_factory=list)
    radius: list = field(default_factory=list)

    @property
    def final_distance(self):
        return self.d_ab[-1]


# ---------------------------------------------------------------------------
# Términos escalares y derivadas respecto a (d, ra) con rb fijo
# ---------------------------------------------------------------------------

def _siou_terms(d, ra, rb):
    """SIoU y sus derivadas (valor, d/dd, d/dra)"""
    regime = regime_of(d, ra, rb)
    if regime == DISJOINT:
        return 0.0, 0.0, 0.0

    inter = lens_volume(d, ra, rb)
    if regime == CONTAINED:
        dv_dd = 0.0
        dv_dra = 4.0 * math.pi * ra * ra if ra < rb else 0.0
    else:
        # Plano de corte a x_a del centro de a; rho2 es el radio del círculo al cuadrado
        x_a = (d * d + ra * ra - rb * rb) / (2.0 * d)
        h_a = ra - x_a
        rho2 = h_a * (2.0 * ra - h_a)
        dv_dd = -math.pi * rho2
        dv_dra = 2.0 * math.pi * ra * h_a

    union = 4.0 * math.pi * (ra ** 3 + rb ** 3) / 3.0 - inter
    du_dd = -dv_dd
    du_dra = 4.0 * math.pi * ra * ra - dv_dra
    value = inter / union
    ds_dd = (dv_dd * union - inter * du_dd) / (union * union)
    ds_dra = (dv_dra * union - inter * du_dra) / (union * union)
    return value, ds_dd, ds_dra


def _ratio_terms(d, ra, rb):
    s = d + ra + rb
    return d / s, (ra + rb) / (s * s), -d / (s * s)


def _angle_terms(d, ra, rb):
    value = angle_from(d, ra, rb)
    if regime_of(d, ra, rb) != INTERSECTING:
        return value, 0.0, 0.0
    # sin(phi_ab) factorizado para evitar cancelación cerca de los extremos
    one_minus = (d * d - (ra - rb) ** 2) / (2.0 * ra * rb)
    one_plus = ((ra + rb) ** 2 - d * d) / (2.0 * ra * rb)
    sin_ab = math.sqrt(max(one_minus * one_plus, 0.0))
    if sin_ab == 0.0:
        return value, 0.0, 0.0
    deta_dc = -1.0 / (math.pi * sin_ab)
    dc_dd = -d / (ra * rb)
    dc_dra = 1.0 / (2.0 * rb) - (rb * rb - d * d) / (2.0 * ra * ra * rb)
    return value, deta_dc * dc_dd, deta_dc * dc_dra


def _sphere_terms(kind, d, ra, rb):
    """Valor de la pérdida y derivadas respecto a d y ra"""
    s, s_d, s_r = _siou_terms(d, ra, rb)
    if kind == SphereLossKind.SIOU:
        return 1.0 - s, -s_d, -s_r

    q, q_d, q_r = _ratio_terms(d, ra, rb)
    if kind == SphereLossKind.SDIOU:
        return 1.0 + q - s, q_d - s_d, q_r - s_r

    e, e_d, e_r = _angle_terms(d, ra, rb)
    if kind == SphereLossKind.SIOU_ANGLE:
        # Tangencia: rama disjunta, η no entra
        if d >= ra + rb:
            return 1.0 - s, -s_d, -s_r
        return 1.0 - s + e, e_d - s_d, e_r - s_r

    # SIOU_PP: rama disjunta solo con R_DR
    if d >= ra + rb:
        return q, q_d, q_r
    return 1.0 + q - s + e, q_d - s_d + e_d, q_r - s_r + e_r


# ---------------------------------------------------------------------------
# Línea base: IoU de los cubos de lado 2r que circunscriben cada esfera
# ---------------------------------------------------------------------------

def _box_terms(pred: Sphere, gt: Sphere):
    """IoU de cubos y su gradiente (cx, cy, cz, r) respecto a la predicción"""
    ca, cb = pred.center.as_tuple(), gt.center.as_tuple()
    ra, rb = pred.radius, gt.radius
    # Esferas disjuntas: IoU 0 aunque los cubos se solapen
    if regime_of(math.dist(ca, cb), ra, rb) == DISJOINT:
        return 0.0, np.zeros(4)
    overlaps, d_center, d_radius = [], [], []
    for i in range(3):
        hi_a, hi_b = ca[i] + ra, cb[i] + rb
        lo_a, lo_b = ca[i] - ra, cb[i] - rb
        o = min(hi_a, hi_b) - max(lo_a, lo_b)
        if o <= 0:
            return 0.0, np.zeros(4)
        top = 1.0 if hi_a < hi_b else 0.0
        bottom = 1.0 if lo_a > lo_b else 0.0
        overlaps.append(o)
        d_center.append(top - bottom)
        d_radius.append(top + bottom)

    inter = overlaps[0] * overlaps[1] * overlaps[2]
    union = 8.0 * ra ** 3 + 8.0 * rb ** 3 - inter
    grad = np.zeros(4)
    di_dr = 0.0
    for i in range(3):
        others = inter / overlaps[i]
        di_dc = d_center[i] * others
        # dU/dc = -dI/dc
        grad[i] = (di_dc * union + inter * di_dc) / (union * union)
        di_dr += d_radius[i] * others
    du_dr = 24.0 * ra * ra - di_dr
    grad[3] = (di_dr * union - inter * du_dr) / (union * union)
    return inter / union, grad


def box_iou(a: Sphere, b: Sphere) -> float:
    return _box_terms(a, b)[0]


# ---------------------------------------------------------------------------
# API pública de pérdidas de esfera
# ---------------------------------------------------------------------------

def sphere_loss(kind: SphereLossKind, pred: Sphere, gt: Sphere) -> float:
    """
    Pérdida de regresión de esfera

    SIoU: 1 - SIoU; SDIoU: 1 + R_DR - SIoU; SIoU++: R_DR si son disjuntas,
    si no 1 + R_DR - SIoU + η; SIoU+ángulo: 1 - SIoU (+ η si se cortan);
    BoxIoU: 1 - IoU de los cubos circunscritos, 1 si las esferas son disjuntas.
    """
    if kind == SphereLossKind.BOX_IOU:
        return 1.0 - box_iou(pred, gt)
    return _sphere_terms(kind, center_distance(pred, gt), pred.radius, gt.radius)[0]


def _as_params(sphere):
    c = sphere.center
    return np.array([c.x, c.y, c.z, sphere.radius])


def _from_params(theta):
    return Sphere.of(theta[0], theta[1], theta[2], theta[3])


def finite_difference_gradient(kind, pred, gt, step=1e-5, one_sided=False):
    """
    Gradiente por diferencias finitas sobre (cx, cy, cz, r)

    Args:
        kind (SphereLossKind): Tipo de pérdida
        pred (Sphere): Esfera predicha (variable)
        gt (Sphere): Esfera de referencia (fija)
        step (float): Paso de la diferencia
        one_sided (bool): Diferencia hacia adelante en vez de centrada

    Returns:
        SphereGradient: Gradiente numérico
    """
    theta0 = _as_params(pred)
    f0 = sphere_loss(kind, pred, gt) if one_sided else None
    grad = np.zeros(4)
    for j in range(4):
        plus = theta0.copy()
        plus[j] += step
        f_plus = sphere_loss(kind, _from_params(plus), gt)
        if one_sided:
            grad[j] = (f_plus - f0) / step
            continue
        minus = theta0.copy()
        minus[j] -= step
        f_minus = sphere_loss(kind, _from_params(minus), gt)
        grad[j] = (f_plus - f_minus) / (2.0 * step)
    return SphereGradient(*(float(g) for g in grad))


def _near_boundary(kind, pred, gt):
    if kind == SphereLossKind.BOX_IOU:
        ca, cb = pred.center.as_tuple(), gt.center.as_tuple()
        for i in range(3):
            hi_a, hi_b = ca[i] + pred.radius, cb[i] + gt.radius
            lo_a, lo_b = ca[i] - pred.radius, cb[i] - gt.radius
            gaps = (hi_a - hi_b, lo_a - lo_b, min(hi_a, hi_b) - max(lo_a, lo_b))
            if any(abs(g) < BOUNDARY_TOL for g in gaps):
                return True
        return False
    d = center_distance(pred, gt)
    ra, rb = pred.radius, gt.radius
    return abs(d - (ra + rb)) < BOUNDARY_TOL or abs(d - abs(ra - rb)) < BOUNDARY_TOL


def sphere_loss_gradient(kind: SphereLossKind, pred: Sphere, gt: Sphere) -> SphereGradient:
    """
    Gradiente de la pérdida respecto al centro y radio de la predicción

    En forma cerrada; junto a una frontera de régimen se usa una
    diferencia finita unilateral.
    """
    if _near_boundary(kind, pred, gt):
        logger.debug(f"Frontera de régimen ({kind.value}): diferencia unilateral")
        return finite_difference_gradient(kind, pred, gt, one_sided=True)

    if kind == SphereLossKind.BOX_IOU:
        _, grad = _box_terms(pred, gt)
        return SphereGradient(*(float(-g) for g in grad))

    d = center_distance(pred, gt)
    _, dl_dd, dl_dr = _sphere_terms(kind, d, pred.radius, gt.radius)
    if d == 0.0:
        return SphereGradient(0.0, 0.0, 0.0, dl_dr)
    ca, cb = pred.center.as_tuple(), gt.center.as_tuple()
    unit = [(ca[i] - cb[i]) / d for i in range(3)]
    return SphereGradient(dl_dd * unit[0], dl_dd * unit[1], dl_dd * unit[2], dl_dr)


def descend(kind, start, target, rate=0.5, max_iters=5000, decay=0.999, max_grad_norm=1.0):
    """
    Descenso de gradiente sobre (centro, radio) de la esfera predicha

    No es descenso simple por defecto: el gradiente se recorta a norma
    max_grad_norm y la tasa decae como rate * decay**k. Con
    max_grad_norm=None y decay=1.0 cada paso es theta - rate * grad.
    El radio se mantiene >= MIN_RADIUS.

    Returns:
        DescentTrace: d_AB, pérdida y radio por iteración
    """
    trace = DescentTrace(kind)
    theta = _as_params(start)
    pred = start
    for k in range(max_iters + 1):
        trace.d_ab.append(center_distance(pred, target))
        trace.loss.append(sphere_loss(kind, pred, target))
        trace.radius.append(pred.radius)
        if k == max_iters:
            break
        grad = sphere_loss_gradient(kind, pred, target).as_array()
        norm = float(np.linalg.norm(grad))
        if norm == 0.0:
            continue
        if max_grad_norm is not None and norm > max_grad_norm:
            grad = grad * (max_grad_norm / norm)
        theta = theta - rate * decay ** k * grad
        theta[3] = max(theta[3], MIN_RADIUS)
        pred = _from_params(theta)
    return trace


# ---------------------------------------------------------------------------
# Pérdidas sobre la rejilla
# ---------------------------------------------------------------------------

def _check_probabilities(probabilities, shape):
    p = np.asarray(probabilities, dtype=np.float64)
    if p.shape != tuple(shape):
        raise LossInputError(f"Forma de probabilidades {p.shape} distinta de {tuple(shape)}")
    if not np.all(np.isfinite(p)) or np.any(p < 0.0) or np.any(p > 1.0):
        raise LossInputError("Probabilidades fuera de [0, 1]")
    return np.clip(p, PROB_EPS, 1.0 - PROB_EPS)


def per_cell_cls_loss(probabilities, labels, params: FocalParams = FocalParams()) -> np.ndarray:
    """
    Término de clasificación de cada celda (0 en las ignoradas)

    p_t es la probabilidad de la clase verdadera: p para positivos, 1 - p
    para negativos. En modo refocal los positivos con p < t pesan w.
    """
    labels = np.asarray(labels)
    p = _check_probabilities(probabilities, labels.shape)
    pos = labels == POSITIVE
    neg = labels == NEGATIVE
    p_t = np.where(pos, p, 1.0 - p)

    alpha, gamma = params.alpha, params.gamma
    weight = np.where(pos | neg, 1.0, 0.0)
    if params.mode == ClsMode.REFOCAL:
        weight = np.where(pos & (p < params.t), params.w, weight)
    elif params.mode == ClsMode.BCE:
        alpha, gamma = 1.0, 0.0

    return -weight * alpha * (1.0 - p_t) ** gamma * np.log(p_t)


def refocal_loss(probabilities, assignment: LabelAssignment, params: FocalParams = FocalParams()) -> float:
    """Suma de la pérdida re-focal sobre las celdas no ignoradas"""
    return float(np.sum(per_cell_cls_loss(probabilities, assignment.labels, params)))


def radius_loss(r, r_star, beta=1.0 / 9.0) -> float:
    """Smooth-L1 tal como está impresa (sin la corrección -0.5β en la rama lineal)"""
    diff = abs(float(r) - float(r_star))
    if diff < beta:
        return 0.5 * diff * diff / beta
    return diff


def offset_loss(f, f_star) -> float:
    """Norma L2 de la diferencia de offsets"""
    return float(np.linalg.norm(np.asarray(f, dtype=np.float64) - np.asarray(f_star, dtype=np.float64)))


def total_loss(probabilities, radii, offsets, assignment: LabelAssignment, gt_spheres,
               params: FocalParams = FocalParams(), lambda_s=2.0, beta=1.0 / 9.0) -> LossBreakdown:
    """
    Pérdida total: clasificación + sum_P (radio + offset + λs * SIoU++)

    Args:
        probabilities: Mapa M_C, forma dims
        radii: Mapa M_R en unidades de rejilla, forma dims
        offsets: Mapa M_O en unidades de rejilla, forma (3,) + dims, orden (x, y, z)
        assignment (LabelAssignment): Asignación con objetivos de regresión
        gt_spheres (list): Esferas de referencia en el orden de assignment.nodule_ids
        params (FocalParams): Parámetros de la pérdida de clasificación
        lambda_s (float): Peso del término SIoU++
        beta (float): β de la pérdida de radio

    Returns:
        LossBreakdown: Términos sumados y total
    """
    dims = assignment.grid.dims
    radii = np.asarray(radii, dtype=np.float64)
    offsets = np.asarray(offsets, dtype=np.float64)
    if radii.shape != dims or offsets.shape != (3,) + dims:
        raise LossInputError(f"Mapas de radio/offset con forma distinta de {dims}")
    if lambda_s < 0:
        raise LossInputError(f"lambda_s debe ser >= 0: {lambda_s}")

    cls_value = refocal_loss(probabilities, assignment, params)
    stride = float(assignment.grid.stride)
    radius_sum = offset_sum = sphere_sum = 0.0

    for flat in np.flatnonzero(assignment.labels.ravel() == POSITIVE):
        cell = np.unravel_index(flat, dims)
        gi = int(assignment.matched[cell])
        if gi < 0 or gi >= len(gt_spheres):
            raise LossInputError(f"Celda positiva {tuple(int(c) for c in cell)} sin esfera asignada")
        r_star = assignment.radius_target[cell]
        f_star = assignment.offset_target[(slice(None),) + cell]
        if not np.isfinite(r_star) or not np.all(np.isfinite(f_star)):
            raise LossInputError(f"Celda positiva {tuple(int(c) for c in cell)} sin objetivos de regresión")

        r_pred = radii[cell]
        f_pred = offsets[(slice(None),) + cell]
        radius_sum += radius_loss(r_pred, r_star, beta)
        offset_sum += offset_loss(f_pred, f_star)

        iz, iy, ix = cell
        if r_pred <= 0:
            logger.debug(f"Radio predicho no positivo en {tuple(int(c) for c in cell)}; se limita")
        pred = Sphere.of(
            (ix + 0.5 + f_pred[0]) * stride,
            (iy + 0.5 + f_pred[1]) * stride,
            (iz + 0.5 + f_pred[2]) * stride,
            max(r_pred, MIN_RADIUS) * stride,
        )
        sphere_sum += sphere_loss(SphereLossKind.SIOU_PP, pred, gt_spheres[gi])

    total = cls_value + radius_sum + offset_sum + lambda_s * sphere_sum
    return LossBreakdown(cls_value, radius_sum, offset_sum, sphere_sum, total)
