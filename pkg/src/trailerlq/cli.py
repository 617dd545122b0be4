"""Command-line front end: ``trailerlq {synthesize,bounds,certify,simulate,report}``.

Exit codes: 0 success, 2 infeasible certificate, 3 simulation flagged,
4 configuration error, 5 numerical failure.
"""
from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import numpy as np

from . import ldi
from . import simulation as sim
from .config import ToolkitConfig, load_config
from .errors import ConfigError, Infeasible, TrailerLQError
from .frenet import EightProfile, NominalPath, generate_nominal_path
from .kvfile import format_kv, parse_kv, sha256_text, write_atomic
from .linearization import open_loop_poles, straight_line_model
from .lq import check_speed_invariance, closed_loop_poles, controllable, synthesize

EXIT_OK, EXIT_INFEASIBLE, EXIT_FLAGGED, EXIT_CONFIG, EXIT_NUMERICAL = 0, 2, 3, 4, 5

log = logging.getLogger("trailerlq")


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_CONFIG, f"{self.prog}: error: {message}\n")


def build_path(cfg: ToolkitConfig) -> NominalPath:
    geo = cfg.geometry
    if cfg.path == "eight":
        prof = EightProfile(cfg.eight_amplitude, cfg.eight_ramp_m, cfg.eight_hold_m,
                            cfg.eight_straight_m)
        return generate_nominal_path(prof, prof.length, cfg.path_ds_m, geo, cfg.v3_mps)
    if cfg.path == "straight":
        return generate_nominal_path(lambda s: 0.0, cfg.straight_length_m, cfg.path_ds_m, geo,
                                     cfg.v3_mps)
    try:
        return NominalPath.from_csv(cfg.path, geo, cfg.v3_mps)
    except (OSError, ValueError) as exc:
        raise ConfigError(f"cannot load path {cfg.path!r}: {exc}") from None


class Pipeline:
    """Runs the stages for one configuration and writes their files into ``out``."""

    def __init__(self, cfg: ToolkitConfig, out: Path, seed: int = 0, threads: int = 1):
        self.cfg = cfg
        self.out = out
        self.seed = seed
        self.threads = threads
        self.digest = cfg.digest()
        self.cert_digest = cfg.certification_digest()
        self._gain = None

    def _write(self, name: str, text: str) -> Path:
        path = self.out / name
        write_atomic(path, text)
        log.info("wrote %s", path)
        return path

    # stages

    @property
    def gain(self):
        if self._gain is None:
            self._gain = synthesize(self.cfg.geometry, self.cfg.weights, self.cfg.v3_mps)
        return self._gain

    def synthesize(self) -> int:
        cfg = self.cfg
        K, sol = self.gain
        v = float(np.sign(cfg.v3_mps))
        A, B = straight_line_model(cfg.geometry, 1.0)
        inv = check_speed_invariance(A, B, cfg.weights.Q, cfg.weights.R)
        Av, Bv = straight_line_model(cfg.geometry, v)
        poles = closed_loop_poles(Av, Bv, K.K)
        items = {
            "format": "trailerlq-gain-1",
            "config_sha256": self.digest,
            "control_law": "u = u0(s) - K e, e = (z3, etheta3, ebeta3, ebeta2)",
            "design_speed_mps": v,
            "K": K.K,
            "P": sol.P,
            "care_residual": sol.residual,
            "controllable": controllable(Av, Bv),
            "closed_loop_poles_re": poles.real,
            "closed_loop_poles_im": poles.imag,
            "open_loop_poles": open_loop_poles(cfg.geometry, v),
            "gain_spread_over_speeds": inv.gain_spread,
            "pole_mismatch_forward_reverse": inv.pole_mismatch,
            "hamiltonian_similarity_residual": inv.similarity_residual,
        }
        self._write("gain.txt", format_kv(items, "LQ path-following gain"))
        return EXIT_OK

    def bounds(self, validate: bool = False) -> tuple[ldi.ElementBoundBox, int]:
        cfg = self.cfg
        K, _ = self.gain
        box = ldi.element_bounds(cfg.parameter_set, cfg.geometry, K, cfg.v3_mps,
                                 cfg.beta_grid_deg, cfg.u0_grid, cfg.inflation,
                                 threads=self.threads)
        items = {
            "format": "trailerlq-bounds-1",
            "config_sha256": self.digest,
            "entries": " ".join(ldi.ENTRY_NAMES),
            "lower": box.lower, "upper": box.upper,
            "raw_lower": box.raw_lower, "raw_upper": box.raw_upper,
            "lower_at": box.lower_at, "upper_at": box.upper_at,
            "grid_points": box.grid_points,
            "grid_beta_deg": cfg.beta_grid_deg, "grid_u0": cfg.u0_grid,
            "inflation": cfg.inflation,
        }
        if validate:
            items["denser_grid_exceedance"] = ldi.bounds_exceedance(
                box, cfg.parameter_set, cfg.geometry, K, threads=self.threads)
        self._write("bounds.txt", format_kv(items, "closed-loop entry intervals (v3 factor excluded)"))
        return box, EXIT_OK

    def certify(self) -> tuple[ldi.LyapunovCertificate | None, int]:
        cfg = self.cfg
        K, _ = self.gain
        box, _ = self.bounds()
        vertices = ldi.enumerate_vertices(box, cfg.v3_mps)
        extra = {"certification_sha256": self.cert_digest, "seed": self.seed}
        try:
            cert = ldi.solve_common_lyapunov(vertices, cfg.eps_per_s, cfg.mu_max, cfg.mu_gap_rel, box)
        except Infeasible as exc:
            log.warning("%s", exc)
            text = ldi.certificate_to_text(None, cfg.geometry, K, cfg.v3_mps, cfg.parameter_set, box,
                                           cfg.eps_per_s, best_margin=exc.best_margin, extra=extra)
            self._write_certificate(text)
            return None, EXIT_INFEASIBLE
        rng = np.random.default_rng(self.seed)
        pts = ldi.sample_parameter_points(cfg.parameter_set, cfg.n_verify_samples, rng)
        report = ldi.verify_certificate(cert, vertices, pts, cfg.geometry, K, cfg.v3_mps)
        text = ldi.certificate_to_text(cert, cfg.geometry, K, cfg.v3_mps, cfg.parameter_set, box,
                                       cfg.eps_per_s, report, extra=extra)
        self._write_certificate(text)
        return cert, EXIT_OK if report.feasible else EXIT_INFEASIBLE

    def _write_certificate(self, text: str) -> None:
        self._write("certificate.txt", text)
        self._write("certificate.sha256", f"{sha256_text(text)}  certificate.txt\n")

    def load_certificate(self) -> tuple[ldi.LyapunovCertificate | None, str | None]:
        """Reuse certificate.txt when it was produced from this configuration."""
        path = self.out / "certificate.txt"
        if path.exists():
            text = path.read_text()
            try:
                cert, kv = ldi.read_certificate(text)
            except ValueError:
                kv = {}
            if kv.get("certification_sha256") == self.cert_digest and kv.get("seed") == str(self.seed):
                return cert, sha256_text(text)
        cert, _ = self.certify()
        return cert, sha256_text(path.read_text())

    def simulate(self) -> int:
        cfg = self.cfg
        K, _ = self.gain
        path = build_path(cfg)
        if cfg.s0_m is not None and not path.s_start <= cfg.s0_m <= path.s_end:
            raise ConfigError(f"s0_m = {cfg.s0_m} outside the path [{path.s_start}, {path.s_end}]")
        self._write("path.csv", path.to_csv_string())
        cert, cert_sha = self.load_certificate()
        scenario = sim.SimulationConfig(path, K, cfg.e0, cfg.v3_mps, cfg.geometry, cfg.dt_s,
                                        cfg.duration_s, cfg.s0_m, cfg.u_max)
        trace = sim.simulate_closed_loop(scenario)
        items = {"format": "trailerlq-tracking-1", "config_sha256": self.digest,
                 "certificate_sha256": cert_sha,
                 "s_direction": "decreasing" if cfg.v3_mps < 0 else "increasing"}
        if cert is not None:
            trace = sim.lyapunov_trace(trace, cert, path, cfg.geometry)
            dc = sim.decay_check(trace, cert.eps)
            items.update({
                "V_initial": trace.V[0], "V_final_ratio": dc.final_ratio,
                "small_signal_entry_time_s": trace.t[dc.entry_index] if dc.entry_index >= 0 else np.inf,
                "small_signal_max_relative_step_increase": dc.max_relative_increase,
                "small_signal_max_decay_violation": dc.max_decay_violation,
                "global_max_relative_step_increase": float(np.max(np.diff(trace.V) / np.maximum(trace.V[:-1], 1e-300)))
                if len(trace) > 1 else 0.0,
                "vdot_difference_check": trace.vdot_check if trace.vdot_check is not None else np.nan,
            })
        rep = sim.tracking_report(trace)
        items.update({
            "flag": rep.flag, "failed": rep.failed, "rows": len(trace), "end_time_s": rep.end_time,
            "max_abs_z3_m": rep.max_abs_z3, "rms_z3_m": rep.rms_z3,
            "max_abs_etheta3_rad": rep.max_abs_etheta3, "max_abs_ebeta3_rad": rep.max_abs_ebeta3,
            "max_abs_ebeta2_rad": rep.max_abs_ebeta2, "final_error_norm": rep.final_error_norm,
            "settling_time_s": rep.settling_time,
        })
        self._write("trace.csv", trace.to_csv_string())
        self._write("tracking.txt", format_kv(items, "closed-loop tracking metrics"))
        if rep.failed:
            log.warning("simulation flagged: %s at t = %.2f s", rep.flag, rep.end_time)
            return EXIT_FLAGGED
        return EXIT_OK

    def report(self) -> int:
        codes = [self.synthesize()]
        codes.append(self.certify()[1])
        codes.append(self.simulate())
        lines = {}
        for name in ("gain.txt", "certificate.txt", "tracking.txt"):
            kv = parse_kv((self.out / name).read_text())
            for key in ("K", "mu", "feasible", "worst_vertex_margin", "worst_sample_margin",
                        "flag", "final_error_norm", "settling_time_s", "V_final_ratio"):
                if key in kv and key not in lines:
                    lines[key] = kv[key]
            lines[f"{name}_sha256"] = sha256_text((self.out / name).read_text())
        lines["exit_codes"] = " ".join(str(c) for c in codes)
        self._write("report.txt", format_kv(lines, "pipeline summary"))
        return max(codes, key=lambda c: (c != 0, c))


def _make_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", metavar="PATH", help="key = value configuration file")
    common.add_argument("--out", metavar="DIR", default=".", help="output directory")
    common.add_argument("--seed", type=int, default=0,
                        help="seed for the random verification samples")
    common.add_argument("--threads", type=int, default=1, help="worker threads for the grid scan")
    common.add_argument("-v", "--verbose", action="store_true")
    parser = _Parser(prog="trailerlq", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    sub.add_parser("synthesize", parents=[common], help="LQ gain and speed-invariance checks")
    b = sub.add_parser("bounds", parents=[common], help="interval bounds of the closed-loop entries")
    b.add_argument("--validate", action="store_true", help="also scan a 3x denser grid")
    sub.add_parser("certify", parents=[common], help="common Lyapunov certificate")
    sub.add_parser("simulate", parents=[common], help="closed-loop run with Lyapunov trace")
    sub.add_parser("report", parents=[common], help="all stages plus a summary")
    sub.add_parser("show-config", parents=[common], help="print the effective configuration")
    return parser


def main(argv=None) -> int:
    args = _make_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s: %(message)s")
    try:
        if args.threads < 1:
            raise ConfigError("--threads must be at least 1")
        cfg = load_config(args.config)
        if args.command == "show-config":
            sys.stdout.write(cfg.to_text())
            return EXIT_OK
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        pipe = Pipeline(cfg, out, args.seed, args.threads)
        if args.command == "synthesize":
            return pipe.synthesize()
        if args.command == "bounds":
            return pipe.bounds(args.validate)[1]
        if args.command == "certify":
            return pipe.certify()[1]
        if args.command == "simulate":
            return pipe.simulate()
        return pipe.report()
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (TrailerLQError, FloatingPointError, np.linalg.LinAlgError) as exc:
        print(f"numerical failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
