def format_percentage(value):
    """
    Formatea una fracción en [0, 1] como porcentaje

    Args:
        value (float): Fracción

    Returns:
        str: Porcentaje con un decimal, p. ej. '89.2%'
    """
    return f"{float(value) * 100.0:.1f}%"


def format_fps(value):
    """Punto de operación como fracción legible: 0.125 -> '1/8'"""
    if value < 1:
        return f"1/{round(1.0 / value)}"
    return f"{value:g}"


def scan_id_from_filename(file_name):
    """Identificador de escáner a partir del nombre del archivo (hasta el primer punto)"""
    return file_name.split('.')[0]
