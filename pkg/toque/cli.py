import os
import sys
import json
import argparse
import logging
import numpy as np
import pandas as pd

from .framework.RunConfig import RunConfig, FIELDS
from .framework.Transport import (
    LogitMatrix, EnergyVector, TransportProblem, energy_transport, sinkhorn_solve, transport_marginals,
)
from .framework.assign_labels import cluster_class_rates, promote, assignment_accuracy, reports_to_frame
from .framework._supporting_fn import (
    InputFileError, ValidationError, NumericalFailure, TrainingDivergence, info, warn,
)
from .learner.Learner import predict
from .learner.train import train_run, evaluate, records_to_jsonl
from .preprocessing.utils import (
    FLOAT_FORMAT, load_matrix, load_vector, save_matrix, read_cost_matrix, read_labels, labels_to_state,
    write_dataset, read_dataset, write_json, save_parameters, load_parameters,
)
from .scoring.ood_score import ood_score
from .scoring.metrics import detection_metrics, score_histograms
from .simulation.simulate import ToyScoodConfig, PRESETS, OOD_SHAPES, generate_scood_toy

PROG = "toque"
EXIT_USAGE = 1
EXIT_IO = 2
EXIT_VALIDATION = 3
EXIT_NUMERICAL = 4

EPILOG = """exit status:
  0  success
  1  usage error (unknown flag or subcommand)
  2  I/O error (unreadable, ragged or non-numeric input)
  3  validation error (invalid configuration or inputs)
  4  numerical failure (non-finite values, training divergence)

config precedence: built-in defaults < --config file < command-line flags
"""


class UsageError(Exception):
    pass


class _HelpFormatter(argparse.ArgumentDefaultsHelpFormatter, argparse.RawDescriptionHelpFormatter):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _fail(kind: str, message) -> None:
    line = " ".join(str(message).split())
    sys.stderr.write("{}: error: {}: {}\n".format(PROG, kind, line))


def _add_transport_flags(parser, defaults: RunConfig):
    parser.add_argument("--epsilon", type=float, default=defaults.epsilon, help="entropic weight epsilon")
    parser.add_argument("--tol", type=float, default=defaults.sinkhorn_tol, help="L1 marginal tolerance")
    parser.add_argument("--max-iter", type=int, default=defaults.sinkhorn_max_iter, help="Sinkhorn iteration cap")
    parser.add_argument("--log-domain", action="store_true", help="log-domain Sinkhorn updates")
    parser.add_argument("--epsilon-scaling", action="store_true",
                        help="solve a halving ladder of epsilons before epsilon itself")
    parser.add_argument("--exponent", choices=("inverse", "literal"), default=defaults.kernel_exponent,
                        help="kernel cost^(1/epsilon) (inverse) or cost^epsilon (literal)")


def get_parser() -> argparse.ArgumentParser:
    defaults = RunConfig()
    fmt = _HelpFormatter
    parser = _Parser(prog=PROG, description="Energy-weighted optimal transport for semi-supervised OOD detection",
                     epilog=EPILOG, formatter_class=fmt)
    sub = parser.add_subparsers(dest="command", metavar="{gen,train,assign,sinkhorn,score,eval}")
    sub.required = True

    gen = sub.add_parser("gen", help="generate a synthetic SCOOD dataset", formatter_class=fmt, epilog=EPILOG)
    gen.add_argument("--preset", choices=sorted(PRESETS), default="toy", help="dataset preset")
    gen.add_argument("--out", required=True, help="output dataset directory")
    gen.add_argument("--ood-shape", choices=OOD_SHAPES, default=None, help="shape of the OOD region (preset value if unset)")
    gen.add_argument("--shift-offset", type=float, default=None, help="covariate mean shift of unlabeled ID, in sigma")
    gen.add_argument("--shift-variance", type=float, default=None, help="variance inflation of unlabeled ID")
    gen.add_argument("--ood-margin", type=float, default=None, help="gap between ID 3-sigma balls and the OOD region")
    gen.add_argument("--seed", type=int, default=0, help="random seed; the dataset is deterministic under it")

    train = sub.add_parser("train", help="alternate representation learning and label assignment",
                           formatter_class=fmt, epilog=EPILOG)
    train.add_argument("--data", required=True, help="dataset directory written by `gen`")
    train.add_argument("--out", required=True, help="output directory")
    train.add_argument("--config", default=None, help="flat `key = value` config file")
    train.add_argument("--quiet", action="store_true", help="no progress bar")
    for key, (default, typ, meaning) in FIELDS.items():
        flag = "--" + key.replace("_", "-")
        help_text = "{} [default: {}]".format(meaning, str(default).lower() if typ is bool else default)
        train.add_argument(flag, dest=key, type=str, default=argparse.SUPPRESS, metavar=typ.__name__.upper(),
                           help=help_text)

    assign = sub.add_parser("assign", help="cluster with energy transport and promote unlabeled samples",
                            formatter_class=fmt, epilog=EPILOG)
    assign.add_argument("--logits", required=True, help="OT-head logits, K rows x N columns")
    assign.add_argument("--labels", required=True, help="label file: sample_id,label(or U)[,truth]")
    assign.add_argument("--out", required=True, help="output directory")
    assign.add_argument("--tau", type=float, default=defaults.tau, help="class-rate threshold tau")
    assign.add_argument("--k", type=int, default=None, help="number of clusters K (checked against the logit rows)")
    assign.add_argument("--classes", type=int, default=None, help="number of ID classes M (inferred if unset)")
    _add_transport_flags(assign, defaults)

    sink = sub.add_parser("sinkhorn", help="solve one entropic transport problem", formatter_class=fmt, epilog=EPILOG)
    sink.add_argument("--cost", required=True, help="K x N cost, dense rows or `k,n,value` triplets")
    sink.add_argument("--alpha", default=None, help="row marginal alpha, single column")
    sink.add_argument("--beta", default=None, help="column marginal beta, single column")
    sink.add_argument("--energy", default=None, help="raw energies; alpha uniform, beta from shifted energies")
    sink.add_argument("--out", required=True, help="assignment matrix Q (dense CSV)")
    _add_transport_flags(sink, defaults)

    score = sub.add_parser("score", help="OOD scores from classifier logits", formatter_class=fmt, epilog=EPILOG)
    score.add_argument("--logits", default=None, help="classifier logits, M rows x N columns")
    score.add_argument("--model", default=None, help="parameter directory written by `train` (with --features)")
    score.add_argument("--features", default=None, help="N x d features scored through --model")
    score.add_argument("--truth", default=None, help="single-column true classes appended as `truth`")
    score.add_argument("--method", choices=("msp", "energy", "tenergy"), default=defaults.score_method,
                       help="score function")
    score.add_argument("--temperature", type=float, default=defaults.temperature, help="T-energy temperature T")
    score.add_argument("--out", required=True, help="scores CSV")

    ev = sub.add_parser("eval", help="detection metrics from score files", formatter_class=fmt, epilog=EPILOG)
    ev.add_argument("--id", dest="id_scores", required=True, help="ID scores CSV with score,prediction,truth")
    ev.add_argument("--ood", dest="ood_scores", required=True, help="OOD scores CSV with a score column")
    ev.add_argument("--out", default=None, help="metrics JSON (stdout if unset)")
    ev.add_argument("--hist", default=None, help="score histogram CSV")
    ev.add_argument("--bins", type=int, default=50, help="histogram bins")
    return parser


def _start_log(out_dir: str, argv):
    os.makedirs(out_dir, exist_ok=True)
    log_filename = os.path.join(out_dir, "toque_RUNNING_LOG.txt")
    with open(log_filename, "w+") as outfile:
        outfile.write("[Command used]:\n{} {}\n\n[Execution log]:\n".format(PROG, " ".join(argv)))
    handler = logging.FileHandler(log_filename)
    logging.getLogger().addHandler(handler)
    return handler


def run_gen(args):
    overrides = {"seed": args.seed, "ood_shape": args.ood_shape, "shift_offset": args.shift_offset,
                 "shift_variance": args.shift_variance, "ood_margin": args.ood_margin}
    config = ToyScoodConfig.from_preset(args.preset, **overrides)
    split = generate_scood_toy(config)
    manifest = {"preset": args.preset, "M": config.M, "d": config.d, "seed": config.seed,
                "counts": split.counts(), "config": config.to_dict()}
    write_dataset(args.out, split.data, split.test_id, split.test_ood, manifest)
    info("Wrote dataset to {}".format(args.out))


def _write_test_scores(path, learner, config, test_id, test_ood):
    rows = []
    for split, X in (("id", test_id[0]), ("ood", test_ood)):
        _, logits, _ = predict(learner, X)
        lm = LogitMatrix.from_batch(logits, "class")
        df = pd.DataFrame({m: ood_score(lm, m, config.temperature) for m in ("msp", "energy", "tenergy")})
        df.insert(0, "split", split)
        df["prediction"] = logits.argmax(axis=1)
        df["truth"] = test_id[1] if split == "id" else -1
        rows.append(df)
    pd.concat(rows, ignore_index=True).to_csv(path, index=False, float_format=FLOAT_FORMAT)


def run_train(args, argv):
    handler = _start_log(args.out, argv)
    try:
        config = RunConfig.from_file(args.config) if args.config else RunConfig()
        overrides = {key: getattr(args, key) for key in FIELDS if hasattr(args, key)}
        config.update(overrides)
        data, test_id, test_ood, _ = read_dataset(args.data)
        config.validate(M=data.M)
        with open(os.path.join(args.out, "config.txt"), "w") as outfile:
            outfile.write(config.to_text())

        epochs_path = os.path.join(args.out, "epochs.jsonl")
        try:
            records, learner = train_run(config, data, test_id, test_ood, progress=not args.quiet)
        except TrainingDivergence as e:
            with open(epochs_path, "w") as outfile:
                outfile.write(records_to_jsonl(e.records))
            write_json(os.path.join(args.out, "divergence.json"), {"epoch": e.epoch, "message": str(e)})
            raise
        with open(epochs_path, "w") as outfile:
            outfile.write(records_to_jsonl(records))
        save_parameters(os.path.join(args.out, "params"), learner)
        if test_id is not None:
            final = {m: evaluate(learner, config, test_id, test_ood, method=m).to_dict()
                     for m in ("msp", "energy", "tenergy")}
            write_json(os.path.join(args.out, "final_metrics.json"), final)
            _write_test_scores(os.path.join(args.out, "test_scores.csv"), learner, config, test_id, test_ood)
        info("Done! Results written to {}".format(args.out))
    finally:
        logging.getLogger().removeHandler(handler)
        handler.close()


def run_assign(args):
    logits = LogitMatrix(load_matrix(args.logits))
    if args.k is not None and args.k != logits.K:
        raise ValidationError("--k {} does not match the {} logit rows.".format(args.k, logits.K))
    labels = read_labels(args.labels)
    if len(labels) != logits.N:
        raise InputFileError("{} lists {} samples but the logits have {} columns.".format(
            args.labels, len(labels), logits.N))
    state, order = labels_to_state(labels, M=args.classes)
    assignment, clusters, _ = energy_transport(
        logits, epsilon=args.epsilon, tol=args.tol, max_iter=args.max_iter,
        log_domain=args.log_domain, exponent=args.exponent, epsilon_scaling=args.epsilon_scaling,
    )
    reports = cluster_class_rates(clusters[order], state, logits.K, tau=args.tau)
    state = promote(reports, args.tau, state)

    os.makedirs(args.out, exist_ok=True)
    reports_to_frame(reports).to_csv(os.path.join(args.out, "cluster_reports.csv"), index=False,
                                     float_format=FLOAT_FORMAT)
    state.epoch_promotions.to_csv(os.path.join(args.out, "promotions.csv"), index=False)
    print("sinkhorn: {}".format(assignment.report()))
    if state.has_hidden_truth:
        correct, total, accuracy = assignment_accuracy(state)
        print("assignment accuracy: {}/{} = {:.6f}".format(correct, total, accuracy))
    else:
        print("promoted: {}".format(len(state.epoch_promotions)))


def run_sinkhorn(args):
    cost = read_cost_matrix(args.cost)
    K, N = cost.shape
    if args.energy is not None:
        if args.alpha is not None or args.beta is not None:
            raise ValidationError("Give either --energy or --alpha/--beta, not both.")
        alpha, beta = transport_marginals(EnergyVector(load_vector(args.energy)), K)
    else:
        alpha = load_vector(args.alpha) if args.alpha else np.full(K, 1.0 / K)
        beta = load_vector(args.beta) if args.beta else np.full(N, 1.0 / N)
    problem = TransportProblem(cost, alpha, beta, args.epsilon)
    assignment = sinkhorn_solve(problem, tol=args.tol, max_iter=args.max_iter, log_domain=args.log_domain,
                                exponent=args.exponent, epsilon_scaling=args.epsilon_scaling)
    save_matrix(args.out, assignment.q)
    print(assignment.report())


def run_score(args):
    if args.logits is not None:
        if args.model is not None:
            raise ValidationError("Give either --logits or --model/--features, not both.")
        logits = LogitMatrix(load_matrix(args.logits), row_kind="class")
    elif args.model is not None and args.features is not None:
        _, batch_logits, _ = predict(load_parameters(args.model), load_matrix(args.features))
        logits = LogitMatrix.from_batch(batch_logits, "class")
    else:
        raise ValidationError("score needs --logits, or --model together with --features.")
    scores = pd.DataFrame({
        "score": ood_score(logits, args.method, args.temperature),
        "prediction": logits.values.argmax(axis=0),
    })
    if args.truth is not None:
        truth = load_vector(args.truth)
        if len(truth) != len(scores):
            raise InputFileError("{} has {} entries for {} samples.".format(args.truth, len(truth), len(scores)))
        scores["truth"] = truth.astype(int)
    scores.to_csv(args.out, index=False, float_format=FLOAT_FORMAT)


def _read_scores(path, columns):
    try:
        df = pd.read_csv(path)
    except (OSError, pd.errors.EmptyDataError, pd.errors.ParserError) as e:
        raise InputFileError("Cannot read {}: {}".format(path, e))
    missing = [c for c in columns if c not in df.columns]
    if missing:
        raise InputFileError("{} lacks columns {}.".format(path, missing))
    return df


def run_eval(args):
    id_df = _read_scores(args.id_scores, ["score", "prediction", "truth"])
    ood_df = _read_scores(args.ood_scores, ["score"])
    report = detection_metrics(id_df.score.to_numpy(), ood_df.score.to_numpy(),
                               id_df.prediction.to_numpy(), id_df.truth.to_numpy())
    if args.out is None:
        print(json.dumps(report.to_dict(), sort_keys=True))
    else:
        write_json(args.out, report.to_dict())
    if args.hist is not None:
        score_histograms(id_df.score.to_numpy(), ood_df.score.to_numpy(), bins=args.bins).to_csv(
            args.hist, index=False, float_format=FLOAT_FORMAT)


def run(argv=None) -> int:
    argv = sys.argv[1:] if argv is None else list(argv)
    parser = get_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as e:
        _fail("usage", e)
        return EXIT_USAGE
    except SystemExit as e:
        return int(e.code or 0)

    try:
        if args.command == "gen":
            run_gen(args)
        elif args.command == "train":
            run_train(args, argv)
        elif args.command == "assign":
            run_assign(args)
        elif args.command == "sinkhorn":
            run_sinkhorn(args)
        elif args.command == "score":
            run_score(args)
        elif args.command == "eval":
            run_eval(args)
    except (InputFileError, OSError) as e:
        _fail("io", e)
        return EXIT_IO
    except ValidationError as e:
        _fail("validation", e)
        return EXIT_VALIDATION
    except NumericalFailure as e:
        if isinstance(e, TrainingDivergence):
            warn("Training diverged at epoch {}.".format(e.epoch))
        _fail("numerical", e)
        return EXIT_NUMERICAL
    return 0


def main():
    sys.exit(run())


if __name__ == "__main__":
    main()
