"""Experiment orchestration: data generation, processing, training and both validation protocols."""
import json
from datetime import datetime
from pathlib import Path
from typing import Any, Dict, List, Optional, Union

import numpy as np
import pandas as pd
from docx import Document
from docx.enum.text import WD_ALIGN_PARAGRAPH
from reportlab.lib.enums import TA_CENTER
from reportlab.lib.pagesizes import letter
from reportlab.lib.styles import ParagraphStyle, getSampleStyleSheet
from reportlab.lib.units import inch
from reportlab.platypus import Paragraph, SimpleDocTemplate, Spacer

from config import ConfigError, check_keys, config, get_float, get_int, load_kv_file
from datapipe import (
    LOG_RATE_HZ,
    MIN_MANEUVER_S,
    RADAR_DROPOUT_S,
    events_path,
    generate_expert_log,
    load_expert_scenario,
    load_log,
    load_tuples,
    process_log,
    save_log,
    save_tuples,
)
from policy_net import describe, load_checkpoint, save_checkpoint
from simcore import NetworkPolicy, ScenarioConfig, arc_road, replay_heldout, run_many, trace_frame
from tracker import TRACKER_KEYS, TrackerConfig
from training import TRAIN_KEYS, NonFiniteLossError, TrainConfig, evaluate_offline, history_frame, save_history, train
from utils.fileio import atomic_output, read_csv, write_csv
from utils.plots import loss_curve, safety_bar_chart, trace_line_plots
from utils.statistics import calculate_safety_stats, calculate_trace_stats, rmse_row

SAFETY_COLUMNS = ["scenario", "policy", "completion", "flag", "flag_time"]
PIPELINE_COLUMNS = ["kind", "start", "end"]

SAFETY_KEYS = (
    "safety.n_scenarios", "safety.radius", "safety.length", "safety.lane_width",
    "safety.ego_speed", "safety.lead_gap", "safety.lead_min", "safety.lead_max",
)
GEN_KEYS = ("gen.cutins", "gen.lane_changes", "gen.maneuvers")
HUMAN_KEYS = ("human.start", "human.duration")
DATA_KEYS = ("data.max_tuples",)


class ExperimentRunner:
    """Runs one experiment step per call and reports the outcome as a result dictionary."""

    def __init__(
        self,
        output_dir: Optional[Path] = None,
        seed: Optional[int] = None,
        workers: Optional[int] = None,
        settings: Optional[Dict[str, str]] = None,
    ):
        """
        Initialize the runner.

        Args:
            output_dir: Default directory for outputs
            seed: Experiment seed (defaults to SAFEIL_SEED)
            workers: Worker processes for scenario fan-out (defaults to SAFEIL_WORKERS)
            settings: Key-value overrides from an experiment config file
        """
        self.output_dir = Path(output_dir) if output_dir else config.OUTPUT_DIR
        self.seed = config.seed() if seed is None else seed
        self.workers = config.workers() if workers is None else workers
        self.settings = dict(settings or {})
        if self.seed < 0:
            raise ConfigError("seed", "must be non-negative")
        if self.workers < 1:
            raise ConfigError("workers", "must be at least 1")
        allowed = set(TRAIN_KEYS) | set(SAFETY_KEYS) | set(TRACKER_KEYS) | set(GEN_KEYS) | set(HUMAN_KEYS) | set(DATA_KEYS)
        check_keys(self.settings, allowed)
        self.tracker_cfg = TrackerConfig.from_mapping(self.settings)

    @staticmethod
    def _new_result(command: str) -> Dict[str, Any]:
        return {
            'success': False,
            'command': command,
            'outputs': {},
            'metadata': {},
            'error': None,
            'error_type': None,
        }

    @staticmethod
    def _fail(result: Dict[str, Any], exc: Exception, verbose: bool) -> Dict[str, Any]:
        result['error'] = str(exc)
        if isinstance(exc, NonFiniteLossError):
            result['error_type'] = 'experiment'
        elif isinstance(exc, (ValueError, KeyError, OSError)):
            result['error_type'] = 'config'
        else:
            result['error_type'] = 'experiment'
        if verbose:
            print(f"\n[ERROR] {result['error']}")
        return result

    # ------------------------------------------------------------------
    # gen
    # ------------------------------------------------------------------

    def _injection_times(self, count: int, duration_s: float, stream: int) -> List[float]:
        if count <= 0:
            return []
        rng = np.random.default_rng([self.seed, stream])
        base = duration_s * (np.arange(count) + 1) / (count + 1)
        jitter = rng.uniform(-2.0, 2.0, size=count)
        return sorted(float(round(t, 2)) for t in np.clip(base + jitter, 15.0, duration_s - 15.0))

    @staticmethod
    def _dropout_times(maneuvers: int, duration_s: float) -> List[float]:
        """Radar dropouts on the log grid that split ``duration_s`` into equal maneuvers."""
        if maneuvers < 1:
            raise ConfigError("gen.maneuvers", "must be at least 1")
        if maneuvers == 1:
            return []
        if duration_s / maneuvers < MIN_MANEUVER_S + RADAR_DROPOUT_S:
            raise ConfigError("gen.maneuvers", f"{duration_s:.0f} s cannot hold {maneuvers} maneuvers of "
                                               f"{MIN_MANEUVER_S:.0f} s or more")
        return [round(duration_s * k / maneuvers * LOG_RATE_HZ) / LOG_RATE_HZ for k in range(1, maneuvers)]

    def generate(self, scenario_path: Union[str, Path], duration_s: float, out: Union[str, Path],
                 verbose: bool = False) -> Dict[str, Any]:
        """Drive the synthetic expert and write the log CSV (plus injection labels)."""
        result = self._new_result('gen')
        try:
            if verbose:
                print("[Step 1] Loading scenario...")
            scenario, tracker_cfg, expert_cfg = load_expert_scenario(scenario_path)
            if duration_s <= 0:
                raise ConfigError("duration", "must be positive")
            cutins = self._injection_times(get_int(self.settings, "gen.cutins", 0), duration_s, 2)
            lane_changes = self._injection_times(get_int(self.settings, "gen.lane_changes", 0), duration_s, 3)
            dropouts = self._dropout_times(get_int(self.settings, "gen.maneuvers", 1), duration_s)
            if verbose:
                print(f"  [OK] Road: {scenario.road.kind}, {scenario.road.length:.0f} m")
                print(f"  [INFO] Injections: {len(cutins)} cut-ins, {len(lane_changes)} lane changes")
                print(f"  [INFO] Radar dropouts: {len(dropouts)} ({len(dropouts) + 1} maneuvers planned)")
                print("[Step 2] Driving the expert...")

            log = generate_expert_log(scenario, duration_s, self.seed, expert_cfg, tracker_cfg,
                                      cutins, lane_changes, dropouts, verbose=verbose)
            if verbose:
                print(f"  [OK] {len(log.records)} records")
                print("[Step 3] Saving log...")
            save_log(log, out)
            result['outputs'] = {'log': str(out), 'events': str(events_path(out))}
            result['metadata'] = {'records': len(log.records), 'injections': len(log.injections), 'seed': self.seed}
            result['success'] = True
            if verbose:
                print(f"  [OK] Log saved: {out}")
            return result
        except Exception as e:
            return self._fail(result, e, verbose)

    # ------------------------------------------------------------------
    # process
    # ------------------------------------------------------------------

    def process(self, log_path: Union[str, Path], out: Union[str, Path], verbose: bool = False) -> Dict[str, Any]:
        """Run the filtering pipeline and write the tuples CSV and the pipeline report."""
        result = self._new_result('process')
        try:
            if verbose:
                print("[Step 1] Reading log...")
            records = load_log(log_path)
            if verbose:
                print(f"  [OK] {len(records)} records")
                print("[Step 2] Filtering and segmenting...")
            pipeline = process_log(records, source=Path(log_path).stem, workers=self.workers, verbose=verbose)
            summary = pipeline.summary()
            if verbose:
                for key, value in summary.items():
                    print(f"  [INFO] {key}: {value}")

            rows = [("lane_change", lo, hi) for lo, hi in pipeline.lane_change_intervals]
            rows += [("cutin", lo, hi) for lo, hi in pipeline.cutin_intervals]
            rows += [(f"maneuver_{m.id}", m.start_t, m.records[-1].t) for m in pipeline.maneuvers]
            report_path = Path(out).with_name(Path(out).stem + ".pipeline.csv")

            if verbose:
                print("[Step 3] Saving tuples...")
            save_tuples(pipeline.tuples, out)
            write_csv(pd.DataFrame(rows, columns=PIPELINE_COLUMNS), report_path)
            result['outputs'] = {'tuples': str(out), 'pipeline_report': str(report_path)}
            result['metadata'] = summary
            result['success'] = True
            if verbose:
                print(f"  [OK] {summary['tuples']} tuples saved: {out}")
            return result
        except Exception as e:
            return self._fail(result, e, verbose)

    # ------------------------------------------------------------------
    # train
    # ------------------------------------------------------------------

    def train(self, tuples_path: Union[str, Path], mode: str, out: Union[str, Path],
              held_id: Optional[int] = None, verbose: bool = False) -> Dict[str, Any]:
        """Train one policy; write the checkpoint, its metrics CSV and a loss plot."""
        result = self._new_result('train')
        try:
            cfg = TrainConfig.from_mapping(self.settings, mode.upper(), self.seed)
            if verbose:
                print("[Step 1] Loading tuples...")
            tuples = load_tuples(tuples_path)
            if held_id is not None:
                if not any(tp.maneuver_id == held_id for tp in tuples):
                    raise ConfigError("hold", f"no tuples belong to maneuver {held_id}")
                tuples = [tp for tp in tuples if tp.maneuver_id != held_id]
            max_tuples = get_int(self.settings, "data.max_tuples", 0)
            if 0 < max_tuples < len(tuples):
                pick = np.sort(np.random.default_rng([self.seed, 4]).choice(len(tuples), max_tuples, replace=False))
                tuples = [tuples[i] for i in pick]
            if not tuples:
                raise ConfigError("tuples", "no training tuples left")
            if verbose:
                print(f"  [OK] {len(tuples)} training tuples")
                print(f"[Step 2] Training {cfg.mode} for {cfg.epochs} epochs...")

            net, history = train(tuples, cfg, verbose=verbose)
            offline = evaluate_offline(net, tuples, cfg)
            if verbose:
                print(f"  [OK] Final loss: {history[-1].loss:.4g} (imitation {history[-1].imitation:.4g})")
                print(f"  [OK] Lane-bound satisfaction: {offline.bound_satisfaction:.3f}")
                print("[Step 3] Saving checkpoint...")

            out = Path(out)
            metrics_path = out.with_name(out.stem + ".metrics.csv")
            plot_path = out.with_name(out.stem + ".loss.svg")
            metadata = cfg.metadata()
            metadata.update({'tuples': len(tuples), 'held_out': held_id,
                             'bound_satisfaction': offline.bound_satisfaction,
                             'mean_imitation': offline.mean_imitation})
            save_checkpoint(out, net, metadata)
            save_history(history, metrics_path)
            loss_curve(history_frame(history), plot_path)
            result['outputs'] = {'checkpoint': str(out), 'metrics': str(metrics_path), 'plot': str(plot_path)}
            result['metadata'] = metadata
            result['success'] = True
            if verbose:
                print(f"  [OK] Checkpoint saved: {out}")
            return result
        except Exception as e:
            return self._fail(result, e, verbose)

    # ------------------------------------------------------------------
    # eval-safety
    # ------------------------------------------------------------------

    def safety_scenarios(self) -> List[ScenarioConfig]:
        """Seeded arc scenarios with a constant-speed lead drawn uniformly from the configured range."""
        s = self.settings
        n = get_int(s, "safety.n_scenarios", 10)
        if n < 1:
            raise ConfigError("safety.n_scenarios", "must be at least 1")
        lead_min, lead_max = get_float(s, "safety.lead_min", 25.0), get_float(s, "safety.lead_max", 32.0)
        if lead_max < lead_min:
            raise ConfigError("safety.lead_max", "must not be below safety.lead_min")
        road = arc_road(get_float(s, "safety.radius", 500.0), get_float(s, "safety.length", 1000.0),
                        get_float(s, "safety.lane_width", 3.5))
        speeds = np.random.default_rng(self.seed).uniform(lead_min, lead_max, size=n)
        return [
            ScenarioConfig(road=road, ego_speed=get_float(s, "safety.ego_speed", 30.0),
                           lead_gap=get_float(s, "safety.lead_gap", 50.0), lead_speed=float(v),
                           seed=self.seed, name=f"S{i + 1}")
            for i, v in enumerate(speeds)
        ]

    def eval_safety(self, checkpoints: Dict[str, Union[str, Path]], out_dir: Union[str, Path],
                    verbose: bool = False) -> Dict[str, Any]:
        """Closed-loop safety benchmark of every checkpoint on the same scenarios."""
        result = self._new_result('eval-safety')
        try:
            if verbose:
                print("[Step 1] Loading checkpoints...")
            policies = {name: NetworkPolicy(load_checkpoint(path)[0]) for name, path in checkpoints.items()}
            scenarios = self.safety_scenarios()
            if verbose:
                print(f"  [OK] {', '.join(policies)}; {len(scenarios)} scenarios")
                print("[Step 2] Running closed-loop scenarios...")

            jobs = [(sc, policy) for sc in scenarios for policy in policies.values()]
            labels = [(sc.name, name) for sc in scenarios for name in policies]
            reports = run_many(jobs, self.tracker_cfg, self.workers, verbose)

            rows = [(sc_name, name, r.completion, r.flag, r.flag_time) for (sc_name, name), r in zip(labels, reports)]
            table = pd.DataFrame(rows, columns=SAFETY_COLUMNS)
            stats = calculate_safety_stats(table)
            if verbose:
                for name, st in stats.items():
                    print(f"  [OK] {name}: mean completion {st['mean_completion']:.3f}, "
                          f"{st['full_completions']}/{st['scenarios']} full")
                for (sc_name, name), r in zip(labels, reports):
                    if r.diagnostics:
                        print(f"  [WARN] {name} on {sc_name}: {r.diagnostics[0]}")
                print("[Step 3] Saving results...")

            out_dir = Path(out_dir)
            csv_path = write_csv(table, out_dir / "safety.csv")
            plot_path = safety_bar_chart(table, out_dir / "safety.svg")
            for (sc_name, name), report in zip(labels, reports):
                write_csv(trace_frame(report), out_dir / "traces" / f"{name}_{sc_name}.csv")
            result['outputs'] = {'results': str(csv_path), 'plot': str(plot_path)}
            result['metadata'] = {'summary': stats,
                                  'diagnostics': {f"{n}_{s}": r.diagnostics for (s, n), r in zip(labels, reports) if r.diagnostics}}
            result['success'] = True
            return result
        except Exception as e:
            return self._fail(result, e, verbose)

    # ------------------------------------------------------------------
    # eval-human
    # ------------------------------------------------------------------

    def eval_human(self, log_path: Union[str, Path], held_id: int, checkpoints: Dict[str, Union[str, Path]],
                   out_dir: Union[str, Path], verbose: bool = False) -> Dict[str, Any]:
        """Replay a held-out maneuver window with every checkpoint; paired CSV + plot per policy."""
        result = self._new_result('eval-human')
        try:
            start = get_float(self.settings, "human.start", 0.0)
            duration = get_float(self.settings, "human.duration", 10.0)
            policies = {name: NetworkPolicy(load_checkpoint(path)[0]) for name, path in checkpoints.items()}
            if verbose:
                print("[Step 1] Rebuilding maneuvers...")
            pipeline = process_log(load_log(log_path))
            held = [m for m in pipeline.maneuvers if m.id == held_id]
            if not held:
                raise ConfigError("held", f"unknown maneuver id {held_id}; available: {[m.id for m in pipeline.maneuvers]}")
            window = held[0].window(start, duration)
            if verbose:
                print(f"  [OK] Maneuver {held_id}: {window.duration:.1f} s window at {window.records[0].vx * 3.6:.0f} km/h")
                print("[Step 2] Replaying in closed loop...")

            out_dir = Path(out_dir)
            outputs, stats = {}, {}
            for name, policy in policies.items():
                replay = replay_heldout(window, policy, self.tracker_cfg)
                paired = replay.paired
                stats[name] = calculate_trace_stats(paired)
                stats[name]['flag'] = replay.report.flag
                table = pd.concat([paired, pd.DataFrame([rmse_row(paired)])], ignore_index=True)
                csv_path = write_csv(table, out_dir / f"human_{name.lower()}.csv")
                plot_path = trace_line_plots(paired, out_dir / f"human_{name.lower()}.svg", policy_name=name)
                outputs[name] = {'trace': str(csv_path), 'plot': str(plot_path)}
                if verbose:
                    print(f"  [OK] {name}: speed RMSE {stats[name]['vx_rmse']:.3f} m/s, "
                          f"offset RMSE {stats[name]['offset_rmse']:.3f} m, flag {replay.report.flag}")
            result['outputs'] = outputs
            result['metadata'] = {'held_id': held_id, 'window': [start, duration], 'summary': stats}
            result['success'] = True
            return result
        except Exception as e:
            return self._fail(result, e, verbose)

    # ------------------------------------------------------------------
    # report
    # ------------------------------------------------------------------

    def report(self, in_dir: Union[str, Path], out_dir: Union[str, Path], verbose: bool = False) -> Dict[str, Any]:
        """Assemble safety, human-likeness and training results into Word and PDF reports."""
        result = self._new_result('report')
        try:
            in_dir = Path(in_dir)
            if not in_dir.is_dir():
                raise FileNotFoundError(f"Results directory not found: {in_dir}")
            sections = self._collect_sections(in_dir)
            if not sections:
                raise ValueError(f"no result CSVs found under {in_dir}")
            out_dir = Path(out_dir)
            docx_path, pdf_path = self._save_report(sections, out_dir)
            result['outputs'] = {'docx': str(docx_path), 'pdf': str(pdf_path)}
            result['metadata'] = {'sections': [title for title, _ in sections]}
            result['success'] = True
            if verbose:
                print(f"  [OK] Report saved: {docx_path}")
                print(f"  [OK] Report saved: {pdf_path}")
            return result
        except Exception as e:
            return self._fail(result, e, verbose)

    def _collect_sections(self, in_dir: Path) -> List[tuple]:
        sections = []
        for path in sorted(in_dir.rglob("safety.csv")):
            stats = calculate_safety_stats(read_csv(path, SAFETY_COLUMNS))
            lines = [f"{name}: mean completion {st['mean_completion']:.3f}, full completions "
                     f"{st['full_completions']}/{st['scenarios']}, lane flags {st['lane_flags']}, "
                     f"collision flags {st['collision_flags']}" for name, st in stats.items()]
            sections.append((f"Safety benchmark ({path.parent.name})", lines))
        for path in sorted(in_dir.rglob("human_*.csv")):
            frame = read_csv(path, ["t", "expert_vx", "policy_vx", "expert_offset", "policy_offset"])
            paired = frame[frame["t"].astype(str) != "rmse"].copy()
            paired["t"] = paired["t"].astype(float)
            st = calculate_trace_stats(paired)
            lines = [f"{key}: {value:.4g}" if isinstance(value, float) else f"{key}: {value}" for key, value in st.items()]
            sections.append((f"Human-likeness ({path.stem})", lines))
        for path in sorted(in_dir.rglob("*.metrics.csv")):
            frame = read_csv(path, ["epoch", "loss", "imitation", "barrier"])
            last = frame.iloc[-1]
            sections.append((f"Training ({path.stem.replace('.metrics', '')})", [
                f"epochs: {int(last['epoch'])}",
                f"final loss: {last['loss']:.4g}",
                f"final imitation loss: {last['imitation']:.4g}",
                f"final barrier loss: {last['barrier']:.4g}",
            ]))
        for path in sorted(in_dir.rglob("*.npz")):
            net, meta = load_checkpoint(path)
            sections.append((f"Checkpoint ({path.name})", [json.dumps(meta, sort_keys=True),
                                                           json.dumps(describe(net))]))
        return sections

    def _save_report(self, sections: List[tuple], out_dir: Path) -> tuple:
        title = "Safe imitation learning: experiment report"
        generated = datetime.now().isoformat(timespec="seconds")

        doc = Document()
        title_para = doc.add_heading(title, 0)
        title_para.alignment = WD_ALIGN_PARAGRAPH.CENTER
        doc.add_paragraph(f"Generated: {generated}")
        doc.add_paragraph(f"Seed: {self.seed}")
        for heading, lines in sections:
            doc.add_heading(heading, level=1)
            for line in lines:
                doc.add_paragraph(line, style="List Bullet")
        docx_path = out_dir / "report.docx"
        with atomic_output(docx_path) as tmp:
            doc.save(str(tmp))

        styles = getSampleStyleSheet()
        styles.add(ParagraphStyle(name='CenterTitle', parent=styles['Title'], alignment=TA_CENTER))
        styles.add(ParagraphStyle(name='SectionHeader', parent=styles['Heading1'], fontSize=14, spaceAfter=12))
        if 'CustomBody' not in styles.byName:
            styles.add(ParagraphStyle(name='CustomBody', parent=styles['Normal'], fontSize=10, leading=13))
        story = [Paragraph(title, styles['CenterTitle']), Spacer(1, 12),
                 Paragraph(f"Generated: {generated}", styles['CustomBody']),
                 Paragraph(f"Seed: {self.seed}", styles['CustomBody']), Spacer(1, 24)]
        for heading, lines in sections:
            story.append(Paragraph(heading, styles['SectionHeader']))
            for line in lines:
                story.append(Paragraph(line.replace("&", "&amp;").replace("<", "&lt;"), styles['CustomBody']))
            story.append(Spacer(1, 12))
        pdf_path = out_dir / "report.pdf"
        with atomic_output(pdf_path) as tmp:
            SimpleDocTemplate(str(tmp), pagesize=letter,
                              leftMargin=0.5 * inch, rightMargin=0.5 * inch,
                              topMargin=0.5 * inch, bottomMargin=0.5 * inch).build(story)
        return docx_path, pdf_path


def load_settings(path: Optional[Union[str, Path]]) -> Dict[str, str]:
    """Experiment config file, or no overrides."""
    return load_kv_file(path) if path else {}


def create_runner(
    output_dir: Optional[Path] = None,
    seed: Optional[int] = None,
    workers: Optional[int] = None,
    settings_path: Optional[Union[str, Path]] = None,
) -> ExperimentRunner:
    """Factory function to create a runner instance."""
    return ExperimentRunner(output_dir=output_dir, seed=seed, workers=workers, settings=load_settings(settings_path))


if __name__ == "__main__":
    import sys

    # Example usage
    runner = create_runner()
    if len(sys.argv) > 2:
        config.ensure_output_dir()
        outcome = runner.generate(sys.argv[1], float(sys.argv[2]), runner.output_dir / "log.csv", verbose=True)
        print(json.dumps({k: v for k, v in outcome.items() if k != 'metadata'}, indent=2))
    else:
        print("Usage: python experiments.py <scenario file> <duration s>")
