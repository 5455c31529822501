import logging
import os

import numpy as np

from core.losses import SphereLossKind, sphere_loss, sphere_loss_gradient, descend
from core.sphere_geometry import Sphere, center_distance
from handlers.common import (
    EXIT_OK, add_config_arguments, resolve_config, output_path, report_failure,
)
from utils.db import save_to_csv, write_json

# Logger
logger = logging.getLogger(__name__)

# Configuración de la simulación de regresión: esfera predicha en (0, 0, -8),
# referencia en el origen, ambas de radio 1.5
DEFAULT_START = (0.0, 0.0, -8.0, 1.5)
DEFAULT_TARGET = (0.0, 0.0, 0.0, 1.5)
DEFAULT_RATE = 0.5
DEFAULT_MAX_ITERS = 5000
DEFAULT_PATH_STEPS = 81

_AXES = {"x": 0, "y": 1, "z": 2}


def gradient_path(kinds, start: Sphere, target: Sphere, axis="z", steps=DEFAULT_PATH_STEPS):
    """
    Pérdida y gradiente a lo largo del segmento de start a target

    El centro se desplaza desde d = d(start, target) hasta d = 0 con el radio
    de start fijo.

    Returns:
        list: Diccionarios (kind, d_ab, loss, grad_<axis>, grad_r)
    """
    d0 = center_distance(start, target)
    c0 = np.array(start.center.as_tuple())
    ct = np.array(target.center.as_tuple())
    direction = (c0 - ct) / d0 if d0 > 0 else np.zeros(3)
    column = f"grad_{axis}"

    rows = []
    for kind in kinds:
        for d in np.linspace(d0, 0.0, steps):
            c = ct + d * direction
            pred = Sphere.of(c[0], c[1], c[2], start.radius)
            grad = sphere_loss_gradient(kind, pred, target)
            rows.append({
                "kind": kind.value,
                "d_ab": float(d),
                "loss": sphere_loss(kind, pred, target),
                column: float(grad.as_array()[_AXES[axis]]),
                "grad_r": grad.d_r,
            })
    return rows


def gradsim_command(args):
    """Curvas de gradiente y simulación de convergencia"""
    try:
        config = resolve_config(args)
        kinds = [SphereLossKind.parse(name) for name in args.kinds]
        start = Sphere.of(*args.start)
        target = Sphere.of(*args.target)
        if args.steps < 2:
            raise ValueError(f"--steps debe ser >= 2: {args.steps}")
        if args.max_iters < 0 or not args.rate > 0:
            raise ValueError("--rate debe ser positiva y --max-iters >= 0")
    except ValueError as e:
        return report_failure("preparar gradsim", e)

    out_dir = output_path(args.out, "gradsim")
    try:
        path_rows = gradient_path(kinds, start, target, args.axis, args.steps)

        trajectory_rows = []
        summary = {}
        for kind in kinds:
            trace = descend(kind, start, target, rate=args.rate, max_iters=args.max_iters)
            for k, (d, loss, r) in enumerate(zip(trace.d_ab, trace.loss, trace.radius)):
                trajectory_rows.append({"kind": kind.value, "iteration": k, "d_ab": d, "loss": loss, "radius": r})
            summary[kind.value] = {
                "final_d_ab": trace.final_distance,
                "final_loss": trace.loss[-1],
                "final_radius": trace.radius[-1],
            }
            logger.info(f"Descenso {kind.value}: d_AB final = {trace.final_distance:.6g}")
    except ValueError as e:
        return report_failure("simular el descenso", e)

    ok = save_to_csv(os.path.join(out_dir, "gradients.csv"), path_rows,
                     ["kind", "d_ab", "loss", f"grad_{args.axis}", "grad_r"])
    ok = save_to_csv(os.path.join(out_dir, "trajectory.csv"), trajectory_rows,
                     ["kind", "iteration", "d_ab", "loss", "radius"]) and ok
    ok = write_json(os.path.join(out_dir, "gradsim.json"), {
        "config": config.to_dict(),
        "start": list(args.start),
        "target": list(args.target),
        "axis": args.axis,
        "rate": args.rate,
        "max_iters": args.max_iters,
        "kinds": summary,
    }) and ok
    if not ok:
        return report_failure("guardar resultados de gradsim", OSError(out_dir))

    print(f"✅ gradsim: {len(kinds)} pérdidas, resultados en {out_dir}")
    for name, values in summary.items():
        print(f"   {name}: d_AB final = {values['final_d_ab']:.6g}")
    return EXIT_OK


def register_gradsim_command(subparsers):
    parser = subparsers.add_parser("gradsim", help="Curvas de gradiente y convergencia de las pérdidas de esfera")
    parser.add_argument("--kinds", nargs="+", default=[k.value for k in SphereLossKind],
                        help="Pérdidas a simular (box_iou, siou, sdiou, siou_pp, siou_angle)")
    parser.add_argument("--start", type=float, nargs=4, metavar=("X", "Y", "Z", "R"), default=list(DEFAULT_START))
    parser.add_argument("--target", type=float, nargs=4, metavar=("X", "Y", "Z", "R"), default=list(DEFAULT_TARGET))
    parser.add_argument("--axis", choices=sorted(_AXES), default="z", help="Componente de gradiente a reportar")
    parser.add_argument("--steps", type=int, default=DEFAULT_PATH_STEPS, help="Muestras en el recorrido")
    parser.add_argument("--rate", type=float, default=DEFAULT_RATE, help="Tasa de aprendizaje")
    parser.add_argument("--max-iters", dest="max_iters", type=int, default=DEFAULT_MAX_ITERS)
    parser.add_argument("--out", help="Directorio de salida")
    add_config_arguments(parser)
    parser.set_defaults(handler=gradsim_command)
