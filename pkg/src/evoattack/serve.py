"""Serve a weight-file model over the external oracle protocol.

    python -m evoattack.serve model.json

Useful as a reference peer for :class:`evoattack.external.ExternalOracle`
and for attacking a model through a process boundary.
"""

import sys

from . import external
from .oracle import load_model


def serve(model, stdin=sys.stdin, stdout=sys.stdout):
    line = stdin.readline()
    shape = external.decode_hello(line)
    if shape != model.input_shape:
        print(f"input shape {shape} does not match model {model.input_shape}", file=sys.stderr)
        return 1
    stdout.write(external.encode_ready(model.num_classes) + "\n")
    stdout.flush()
    for line in stdin:
        if not line.strip():
            continue
        if external.is_bye(line):
            break
        request_id, pixels = external.decode_request(line)
        probs = model.forward(pixels.reshape(model.input_shape))
        stdout.write(external.encode_response(request_id, probs) + "\n")
        stdout.flush()
    return 0


def main(argv=None):
    argv = sys.argv[1:] if argv is None else argv
    if len(argv) != 1:
        print("usage: python -m evoattack.serve MODEL.json", file=sys.stderr)
        return 2
    return serve(load_model(argv[0]))


if __name__ == "__main__":
    sys.exit(main())
