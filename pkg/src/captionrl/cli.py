"""Command-line front end: scoring, stability analysis, toy training,
and dataset assembly as reproducible batch commands.

Exit codes: 0 success, 1 runtime or IO failure, 2 usage error. All
randomness is seeded through flags, so reruns with identical inputs
produce byte-identical outputs. Judge settings resolve with precedence
flags > config file > environment variables.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

from . import __version__
from .errors import CaptionRlError, SchemaError, UnknownRecordId
from .grpo import (
    ToyTrainConfig,
    group_advantages,
    train_toy,
    write_summary_json,
    write_trace_csv,
)
from .judge import (
    API_KEY_ENV,
    ENDPOINT_ENV,
    HttpTransport,
    JudgeClient,
    JudgeConfig,
    JudgeMatcher,
    ScoreCache,
    stability_report,
)
from .keyinfo import element_set_to_dict, read_records, record_from_dict
from .parsing import format_reward, parse_response, parse_structured_caption
from .pipeline import (
    assemble_cot_record,
    balance_sample,
    cot_record_from_dict,
    dedup_records,
    read_cot_records,
    read_rl_records,
    render_condition_table,
    rl_record_from_dict,
    write_cot_records,
    write_rl_records,
)
from .rewards import LexicalMatcher, RewardWeights, score_candidate


def _read_kv_file(path: str) -> dict[str, str]:
    """Parse a simple key=value config file; # starts a comment."""
    values: dict[str, str] = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ValueError(f"{path}:{lineno}: expected key=value")
            key, value = line.split("=", 1)
            values[key.strip()] = value.strip()
    return values


def _load_weights(path: str | None) -> RewardWeights:
    if path is None:
        return RewardWeights()
    raw = _read_kv_file(path)
    return RewardWeights.from_mapping({k: float(v) for k, v in raw.items()})


def _resolve_judge_config(args: argparse.Namespace) -> JudgeConfig:
    file_cfg = _read_kv_file(args.config) if getattr(args, "config", None) else {}

    def pick(flag_value, file_key: str, env_key: str | None, default):
        if flag_value is not None:
            return flag_value
        if file_key in file_cfg:
            return file_cfg[file_key]
        if env_key and env_key in os.environ:
            return os.environ[env_key]
        return default

    endpoint = pick(getattr(args, "judge_endpoint", None), "judge_endpoint", ENDPOINT_ENV, "")
    api_key = pick(getattr(args, "judge_api_key", None), "judge_api_key", API_KEY_ENV, None)
    if api_key is not None:
        # HttpTransport reads the key from the environment; route the
        # resolved value through so precedence still holds.
        os.environ[API_KEY_ENV] = str(api_key)
    return JudgeConfig(
        endpoint=str(endpoint),
        model_name=str(pick(getattr(args, "judge_model", None), "judge_model", None,
                            JudgeConfig.model_name)),
        temperature=float(pick(getattr(args, "judge_temperature", None), "judge_temperature",
                               None, JudgeConfig.temperature)),
        top_p=float(pick(getattr(args, "judge_top_p", None), "judge_top_p", None,
                         JudgeConfig.top_p)),
        max_new_tokens=int(pick(getattr(args, "judge_max_new_tokens", None),
                                "judge_max_new_tokens", None, JudgeConfig.max_new_tokens)),
        timeout=float(pick(getattr(args, "judge_timeout", None), "judge_timeout", None,
                           JudgeConfig.timeout)),
        max_retries=int(pick(getattr(args, "judge_max_retries", None), "judge_max_retries",
                             None, JudgeConfig.max_retries)),
        cache_path=pick(getattr(args, "judge_cache", None), "judge_cache", None, None),
    )


def _add_judge_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", help="key=value config file")
    parser.add_argument("--judge-endpoint", dest="judge_endpoint")
    parser.add_argument("--judge-api-key", dest="judge_api_key")
    parser.add_argument("--judge-model", dest="judge_model")
    parser.add_argument("--judge-temperature", dest="judge_temperature", type=float)
    parser.add_argument("--judge-top-p", dest="judge_top_p", type=float)
    parser.add_argument("--judge-max-new-tokens", dest="judge_max_new_tokens", type=int)
    parser.add_argument("--judge-timeout", dest="judge_timeout", type=float)
    parser.add_argument("--judge-max-retries", dest="judge_max_retries", type=int)
    parser.add_argument("--judge-cache", dest="judge_cache")


def _read_jsonl_dicts(path: str) -> list[dict]:
    out = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                out.append(json.loads(line))
    return out


def _open_out(path: str | None):
    if path is None or path == "-":
        return sys.stdout, False
    return open(path, "w", encoding="utf-8"), True


# --- subcommands ----------------------------------------------------------------


def _cmd_parse(args: argparse.Namespace) -> int:
    raw = Path(args.input).read_text(encoding="utf-8")
    responses = [raw]
    if args.jsonl:
        responses = [json.loads(line)["response"] for line in raw.splitlines() if line.strip()]
    out, close = _open_out(args.output)
    try:
        for response in responses:
            parsed = parse_response(response)
            report = {
                "think_tag_ok": parsed.think_tag_ok,
                "answer_tag_ok": parsed.answer_tag_ok,
                "six_part_ok": parsed.six_part_ok,
                "stray_separator": parsed.stray_separator,
                "format_reward": format_reward(parsed),
            }
            if parsed.six_part_ok and parsed.answer is not None:
                caption = parse_structured_caption(parsed.answer)
                report["sections"] = {
                    "dense": caption.dense,
                    "main_object": caption.main_object,
                    "background": caption.background,
                    "movement": caption.movement,
                    "style": caption.style,
                    "camera": caption.camera,
                }
            out.write(json.dumps(report, ensure_ascii=False) + "\n")
    finally:
        if close:
            out.close()
    return 0


def _cmd_score(args: argparse.Namespace) -> int:
    records = {r.id: r for r in read_records(args.records)}
    candidates = _read_jsonl_dicts(args.candidates)
    weights = _load_weights(args.weights)

    if args.matcher == "lexical":
        matcher = LexicalMatcher()
    else:
        cfg = _resolve_judge_config(args)
        if not cfg.endpoint:
            raise CaptionRlError(
                f"judge matcher needs an endpoint (flag, config file, or {ENDPOINT_ENV})"
            )
        matcher = JudgeMatcher(JudgeClient(cfg))

    def score_one(entry: dict):
        record_id = entry.get("record_id", entry.get("id"))
        if record_id not in records:
            raise UnknownRecordId(str(record_id))
        breakdown = score_candidate(entry["response"], records[record_id], matcher, weights)
        return record_id, breakdown

    if args.jobs > 1:
        with ThreadPoolExecutor(max_workers=args.jobs) as pool:
            results = list(pool.map(score_one, candidates))
    else:
        results = [score_one(entry) for entry in candidates]

    out, close = _open_out(args.output)
    try:
        for record_id, breakdown in results:
            row = {"record_id": record_id}
            row.update(breakdown.to_dict())
            out.write(json.dumps(row, ensure_ascii=False) + "\n")
    finally:
        if close:
            out.close()

    lines = _summary_table([b for _, b in results])
    if args.summary:
        Path(args.summary).write_text(lines, encoding="utf-8")
    else:
        sys.stderr.write(lines)
    return 0


def _summary_table(breakdowns) -> str:
    names = ("r_format", "r_user", "r_detail", "r_supp", "r_contra", "total")
    rows = [("component", "mean", "min", "max")]
    count = len(breakdowns)
    for name in names:
        values = [getattr(b, name) for b in breakdowns] or [0.0]
        rows.append(
            (
                name,
                f"{sum(values) / max(count, 1):.4f}",
                f"{min(values):.4f}",
                f"{max(values):.4f}",
            )
        )
    widths = [max(len(row[i]) for row in rows) for i in range(4)]
    text = [f"candidates scored: {count}"]
    for row in rows:
        text.append("  ".join(cell.ljust(w) for cell, w in zip(row, widths)).rstrip())
    return "\n".join(text) + "\n"


def _cmd_judge_stability(args: argparse.Namespace) -> int:
    reference = None
    if args.reference:
        reference = json.loads(Path(args.reference).read_text(encoding="utf-8"))

    if args.scores_file:
        matrix = json.loads(Path(args.scores_file).read_text(encoding="utf-8"))
    else:
        if not (args.records and args.candidates):
            raise CaptionRlError(
                "need either --scores-file or both --records and --candidates"
            )
        cfg = _resolve_judge_config(args)
        if not cfg.endpoint:
            raise CaptionRlError(
                f"live stability runs need an endpoint (flag, config file, or {ENDPOINT_ENV})"
            )
        records = {r.id: r for r in read_records(args.records)}
        candidates = _read_jsonl_dicts(args.candidates)
        # Repeats must hit the judge every time, so no cache is attached.
        client = JudgeClient(cfg, transport=HttpTransport(cfg.endpoint), cache=None)
        matcher = JudgeMatcher(client)
        matrix = []
        for entry in candidates:
            record_id = entry.get("record_id", entry.get("id"))
            if record_id not in records:
                raise UnknownRecordId(str(record_id))
            record = records[record_id]
            parsed = parse_response(entry["response"])
            answer = parsed.answer if parsed.answer_tag_ok and parsed.answer else ""
            payload = json.dumps(
                {
                    "user": element_set_to_dict(record.user),
                    "supplementary": element_set_to_dict(record.supplementary),
                    "imaginary": element_set_to_dict(record.imaginary),
                },
                ensure_ascii=False,
            )
            matrix.append([matcher.set_coverage(payload, answer) for _ in range(args.repeats)])

    report = stability_report(matrix, reference_scores=reference)
    out, close = _open_out(args.output)
    try:
        json.dump(report.to_dict(), out, indent=2, sort_keys=True)
        out.write("\n")
    finally:
        if close:
            out.close()
    return 0


def _cmd_grpo_train(args: argparse.Namespace) -> int:
    cfg = ToyTrainConfig(
        seed=args.seed,
        iterations=args.iters,
        group_size=args.group_size,
        learning_rate=args.lr,
        vocab_size=args.vocab_size,
        max_length=args.max_length,
        epsilon=args.epsilon,
        beta=args.beta,
    )
    result = train_toy(cfg)
    if args.trace:
        write_trace_csv(args.trace, result.trace)
    summary = result.summary()
    if args.summary:
        write_summary_json(args.summary, summary)
    else:
        json.dump(summary, sys.stdout, indent=2, sort_keys=True)
        sys.stdout.write("\n")
    return 0


def _cmd_dataset_build(args: argparse.Namespace) -> int:
    pool = _read_jsonl_dicts(args.input)
    records = []
    for entry in pool:
        records.append(
            assemble_cot_record(
                instruction=entry["instruction"],
                steps=entry["steps"],
                answer=entry["answer"],
                condition_types=entry.get("condition_types", ()),
                record_id=entry.get("id"),
            )
        )
    records = dedup_records(records)
    write_cot_records(args.output, records)
    sys.stderr.write(f"built {len(records)} records from {len(pool)} pool entries\n")
    return 0


def _cmd_dataset_validate(args: argparse.Namespace) -> int:
    entries = _read_jsonl_dicts(args.input)
    loaders = {
        "cot": cot_record_from_dict,
        "rl": rl_record_from_dict,
        "keyinfo": record_from_dict,
    }
    loader = loaders[args.kind]
    for i, entry in enumerate(entries):
        try:
            loader(entry)
        except (SchemaError, ValueError) as exc:
            sys.stderr.write(f"{args.input}:{i + 1}: {exc}\n")
            return 1
    sys.stderr.write(f"{len(entries)} records valid\n")
    return 0


def _cmd_dataset_balance(args: argparse.Namespace) -> int:
    quotas = {}
    for spec in args.quota:
        if "=" not in spec:
            raise CaptionRlError(f"quota must look like condition=count: {spec!r}")
        cond, count = spec.split("=", 1)
        quotas[cond.strip()] = int(count)
    if args.kind == "cot":
        records = read_cot_records(args.input)
        writer = write_cot_records
    else:
        records = read_rl_records(args.input)
        writer = write_rl_records
    selected, report = balance_sample(records, quotas, seed=args.seed)
    writer(args.output, selected)
    sys.stderr.write(json.dumps(report.to_dict(), sort_keys=True) + "\n")
    return 0


def _cmd_report(args: argparse.Namespace) -> int:
    if args.kind == "cot":
        records = read_cot_records(args.input)
    else:
        records = read_rl_records(args.input)
    sys.stdout.write(render_condition_table(records, style=args.style))
    return 0


def _cmd_advantages(args: argparse.Namespace) -> int:
    if args.input and args.input != "-":
        rewards = json.loads(Path(args.input).read_text(encoding="utf-8"))
    else:
        rewards = json.loads(sys.stdin.read())
    advantages = group_advantages(rewards, args.degenerate_std_epsilon)
    out, close = _open_out(args.output)
    try:
        json.dump([float(a) for a in advantages], out)
        out.write("\n")
    finally:
        if close:
            out.close()
    return 0


# --- parser wiring --------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="captionrl",
        description="Structured-caption rewards, judge scoring, and GRPO utilities.",
    )
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("parse", help="parse a raw response into a structure report")
    p.add_argument("--input", required=True, help="file with one raw response")
    p.add_argument("--jsonl", action="store_true",
                   help="treat input as JSONL of {\"response\": ...} lines")
    p.add_argument("--output")
    p.set_defaults(func=_cmd_parse)

    p = sub.add_parser("score", help="score candidate responses against key-info records")
    p.add_argument("--records", required=True, help="key-info JSONL")
    p.add_argument("--candidates", required=True,
                   help="JSONL of {\"record_id\": ..., \"response\": ...}")
    p.add_argument("--matcher", choices=("lexical", "judge"), default="lexical")
    p.add_argument("--weights", help="key=value file with alpha/rho/gamma/lambda")
    p.add_argument("--output")
    p.add_argument("--summary", help="write the summary table here instead of stderr")
    p.add_argument("--jobs", type=int, default=1)
    _add_judge_flags(p)
    p.set_defaults(func=_cmd_score)

    p = sub.add_parser("judge-stability", help="variance report over repeated judge scores")
    p.add_argument("--scores-file", help="JSON matrix of precomputed scores (offline mode)")
    p.add_argument("--records")
    p.add_argument("--candidates")
    p.add_argument("--repeats", type=int, default=5)
    p.add_argument("--reference", help="JSON list of reference scores")
    p.add_argument("--output")
    _add_judge_flags(p)
    p.set_defaults(func=_cmd_judge_stability)

    p = sub.add_parser("grpo-train", help="train the toy policy and emit a trace")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--iters", type=int, default=300)
    p.add_argument("--group-size", type=int, default=8)
    p.add_argument("--lr", type=float, default=1.0)
    p.add_argument("--vocab-size", type=int, default=30)
    p.add_argument("--max-length", type=int, default=16)
    p.add_argument("--epsilon", type=float, default=0.2)
    p.add_argument("--beta", type=float, default=0.001)
    p.add_argument("--trace", help="trace CSV path")
    p.add_argument("--summary", help="summary JSON path (default: stdout)")
    p.set_defaults(func=_cmd_grpo_train)

    p = sub.add_parser("dataset", help="build, validate, or balance record files")
    dataset_sub = p.add_subparsers(dest="dataset_command", required=True)

    b = dataset_sub.add_parser("build", help="assemble + dedup CoT records from a raw pool")
    b.add_argument("--input", required=True,
                   help="JSONL of {instruction, steps[4], answer, condition_types?, id?}")
    b.add_argument("--output", required=True)
    b.set_defaults(func=_cmd_dataset_build)

    v = dataset_sub.add_parser("validate", help="schema-check a record file")
    v.add_argument("--input", required=True)
    v.add_argument("--kind", choices=("cot", "rl", "keyinfo"), required=True)
    v.set_defaults(func=_cmd_dataset_validate)

    bal = dataset_sub.add_parser("balance", help="seeded per-condition quota sampling")
    bal.add_argument("--input", required=True)
    bal.add_argument("--output", required=True)
    bal.add_argument("--kind", choices=("cot", "rl"), default="cot")
    bal.add_argument("--quota", action="append", default=[],
                     help="condition=count, repeatable")
    bal.add_argument("--seed", type=int, default=0)
    bal.set_defaults(func=_cmd_dataset_balance)

    p = sub.add_parser("report", help="per-condition counts table")
    p.add_argument("--input", required=True)
    p.add_argument("--kind", choices=("cot", "rl"), default="cot")
    p.add_argument("--style", choices=("markdown", "csv"), default="markdown")
    p.set_defaults(func=_cmd_report)

    p = sub.add_parser("advantages", help="group-relative advantages for a reward list")
    p.add_argument("--input", help="JSON list of rewards (default: stdin)")
    p.add_argument("--output")
    p.add_argument("--degenerate-std-epsilon", type=float, default=1e-8)
    p.set_defaults(func=_cmd_advantages)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except FileNotFoundError as exc:
        sys.stderr.write(f"error: file not found: {exc.filename}\n")
        return 1
    except UnknownRecordId as exc:
        sys.stderr.write(f"error: {exc}\n")
        return 1
    except (CaptionRlError, ValueError, KeyError, json.JSONDecodeError, OSError) as exc:
        sys.stderr.write(f"error: {exc}\n")
        return 1


def entrypoint() -> None:
    raise SystemExit(main())


if __name__ == "__main__":
    raise SystemExit(main())
