"""CSV serialisation of round traces."""

import csv
import io

TRACE_COLUMNS = (
    "round", "block_id", "train_loss", "block_grad_norm_sq", "delta_norm_sq",
    "mean_client_delta_norm_sq", "bytes_up", "bytes_down", "compute_time",
    "comm_time", "round_wall", "cum_wall",
)
_INT_COLUMNS = {"round", "block_id", "bytes_up", "bytes_down"}


def _fmt(col, v):
    return str(int(v)) if col in _INT_COLUMNS else format(float(v), ".17g")


def trace_csv(traces):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(TRACE_COLUMNS)
    for tr in traces:
        w.writerow([_fmt(c, getattr(tr, c)) for c in TRACE_COLUMNS])
    return buf.getvalue()


def write_trace_csv(traces, path):
    with open(path, "w", newline="") as fh:
        fh.write(trace_csv(traces))


def read_trace_csv(path):
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    return [{k: (int(v) if k in _INT_COLUMNS else float(v)) for k, v in r.items()} for r in rows]
