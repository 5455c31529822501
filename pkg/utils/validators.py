import math
import re

# Encabezados esperados de los CSV
ANNOTATION_COLUMNS = ["seriesuid", "coordX", "coordY", "coordZ", "diameter_mm"]
CANDIDATE_COLUMNS = ["seriesuid", "coordX", "coordY", "coordZ", "radius", "probability"]


def validate_number(text):
    """
    Valida si un texto es un número finito (entero o decimal)

    Args:
        text (str): Texto a validar

    Returns:
        bool: True si es un número válido, False en caso contrario
    """
    try:
        return math.isfinite(float(str(text).strip()))
    except (TypeError, ValueError):
        return False


def validate_positive_number(text):
    """
    Valida si un texto es un número positivo

    Args:
        text (str): Texto a validar

    Returns:
        bool: True si es un número positivo, False en caso contrario
    """
    return validate_number(text) and float(str(text).strip()) > 0


def validate_probability(text):
    """
    Valida si un texto es una probabilidad en [0, 1]

    Args:
        text (str): Texto a validar

    Returns:
        bool: True si está en [0, 1], False en caso contrario
    """
    return validate_number(text) and 0.0 <= float(str(text).strip()) <= 1.0


def validate_not_empty(text):
    """Valida si un texto no está vacío"""
    return text is not None and str(text).strip() != ''


def validate_scan_id(text):
    """Identificador de escáner: no vacío, sin comas ni saltos de línea"""
    return validate_not_empty(text) and re.search(r'[,\r\n]', str(text)) is None


def validate_header(fieldnames, expected):
    """
    Valida que el encabezado contenga todas las columnas esperadas

    Returns:
        list: Columnas que faltan (vacía si el encabezado es válido)
    """
    present = set(fieldnames or [])
    return [col for col in expected if col not in present]


def annotation_row_errors(row):
    """
    Revisa una fila del CSV de anotaciones

    Returns:
        list: Mensajes de error (vacía si la fila es válida)
    """
    errors = []
    if not validate_scan_id(row.get("seriesuid")):
        errors.append("seriesuid vacío o inválido")
    for col in ("coordX", "coordY", "coordZ"):
        if not validate_number(row.get(col)):
            errors.append(f"{col} no es un número: {row.get(col)!r}")
    if not validate_positive_number(row.get("diameter_mm")):
        errors.append(f"diameter_mm debe ser positivo: {row.get('diameter_mm')!r}")
    return errors


def candidate_row_errors(row):
    """
    Revisa una fila del CSV de candidatos

    Returns:
        list: Mensajes de error (vacía si la fila es válida)
    """
    errors = []
    if not validate_scan_id(row.get("seriesuid")):
        errors.append("seriesuid vacío o inválido")
    for col in ("coordX", "coordY", "coordZ"):
        if not validate_number(row.get(col)):
            errors.append(f"{col} no es un número: {row.get(col)!r}")
    if not validate_positive_number(row.get("radius")):
        errors.append(f"radius debe ser positivo: {row.get('radius')!r}")
    if not validate_probability(row.get("probability")):
        errors.append(f"probability fuera de [0, 1]: {row.get('probability')!r}")
    return errors
