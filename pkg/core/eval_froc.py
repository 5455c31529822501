import bisect
import logging
import math
from dataclasses import dataclass, field

# Logger
logger = logging.getLogger(__name__)

# Falsos positivos por escáner en los que se mide la sensibilidad
OPERATING_POINTS = (0.125, 0.25, 0.5, 1.0, 2.0, 4.0, 8.0)

# Etiquetas de candidato
TP = "TP"
FP = "FP"
IGNORED = "IGNORED"


class FrocError(ValueError):
    """Datos insuficientes para calcular la curva FROC"""


@dataclass
class ScanResult:
    scan_id: str
    candidates: list = field(default_factory=list)
    annotations: list = field(default_factory=list)


@dataclass
class HitMatch:
    """Resultado del emparejamiento de un escáner"""
    candidate_labels: list
    detected: list
    trigger_scores: list


@dataclass
class FrocCurve:
    points: list
    average: float

    def sensitivity_at(self, fps):
        for f, s in self.points:
            if f == fps:
                return s
        raise KeyError(fps)


def _hits(candidate, annotation):
    return math.dist(candidate.sphere.center.as_tuple(), annotation.center.as_tuple()) <= annotation.radius


def match_hits(result: ScanResult) -> HitMatch:
    """
    Empareja candidatos con anotaciones de un escáner

    Un candidato acierta una anotación si su centro está a distancia <= radio.
    Cada anotación se acredita al candidato de mayor puntaje que la acierta;
    los demás candidatos que solo aciertan anotaciones ya acreditadas se
    ignoran y los que no aciertan ninguna son falsos positivos. Las etiquetas
    se devuelven en el orden de result.candidates.
    """
    order = sorted(range(len(result.candidates)), key=lambda i: -result.candidates[i].score)
    credited = set()
    hitting = set()
    detected, trigger = [], []
    for annotation in result.annotations:
        best = None
        for i in order:
            if _hits(result.candidates[i], annotation):
                hitting.add(i)
                if best is None:
                    best = i
        detected.append(best is not None)
        trigger.append(result.candidates[best].score if best is not None else None)
        if best is not None:
            credited.add(best)

    labels = []
    for i in range(len(result.candidates)):
        if i in credited:
            labels.append(TP)
        elif i in hitting:
            labels.append(IGNORED)
        else:
            labels.append(FP)
    return HitMatch(labels, detected, trigger)


def sweep_thresholds(results):
    """
    Recorre todos los umbrales de puntaje

    Returns:
        list: Tuplas (umbral, fps_por_escaner, sensibilidad) empezando por
        el umbral infinito (sin candidatos aceptados)
    """
    if not results:
        raise FrocError("Se necesita al menos un escáner")
    total = sum(len(r.annotations) for r in results)
    if total == 0:
        raise FrocError("No hay anotaciones: la sensibilidad no está definida")

    fp_scores, tp_scores = [], []
    for result in results:
        match = match_hits(result)
        for candidate, label in zip(result.candidates, match.candidate_labels):
            if label == FP:
                fp_scores.append(candidate.score)
        tp_scores.extend(s for s in match.trigger_scores if s is not None)

    n_scans = len(results)
    fp_scores.sort()
    tp_scores.sort()
    steps = [(math.inf, 0.0, 0.0)]
    for threshold in sorted(set(fp_scores) | set(tp_scores), reverse=True):
        fps = (len(fp_scores) - bisect.bisect_left(fp_scores, threshold)) / n_scans
        sens = (len(tp_scores) - bisect.bisect_left(tp_scores, threshold)) / total
        steps.append((threshold, fps, sens))
    return steps


def froc(results) -> FrocCurve:
    """Sensibilidad en los siete puntos de operación y su promedio"""
    steps = sweep_thresholds(results)
    points = []
    for f in OPERATING_POINTS:
        # Umbral más permisivo cuyo FPs/escáner no supera f
        sens = max(s for _, fps, s in steps if fps <= f)
        points.append((f, sens))
    average = sum(s for _, s in points) / len(points)
    logger.debug(f"FROC: {points}, promedio={average:.4f}")
    return FrocCurve(points, average)
