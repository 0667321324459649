# Copyright 2026 The lpkit Authors. All Rights Reserved.
#
# Licensed under the Apache License, Version 2.0 (the "License");
# you may not use this file except in compliance with the License.
# You may obtain a copy of the License at
#
#     http://www.apache.org/licenses/LICENSE-2.0
#
# Unless required by applicable law or agreed to in writing, software
# distributed under the License is distributed on an "AS IS" BASIS,
# WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
# See the License for the specific language governing permissions and
# limitations under the License.

"""Writes tests/golden/<format>.csv (code,decoded_value) from the bit layouts.

Decoding here is exact rational arithmetic, kept apart from the C++ codec.
"""

import argparse
import pathlib
from fractions import Fraction
from statistics import NormalDist

# name: (sign_bits, exp_bits, man_bits, bias, has_inf, nan_codes)
FORMATS = {
    "E4M3": (1, 4, 3, 7, False, {0x7F, 0xFF}),
    "E5M2": (1, 5, 2, 15, True, {0x7D, 0x7E, 0x7F, 0xFD, 0xFE, 0xFF}),
    "E3M2": (1, 3, 2, 3, False, set()),
    "E2M3": (1, 2, 3, 1, False, set()),
    "E2M1": (1, 2, 1, 1, False, set()),
    "E8M0": (0, 8, 0, 127, False, {0xFF}),
}


def decode(code, fmt):
    s, e, m, bias, has_inf, nans = fmt
    if code in nans:
        return "nan" if not (s and code >> (e + m) & 1) else "-nan"
    neg = s and (code >> (e + m)) & 1
    ef = (code >> m) & ((1 << e) - 1)
    mf = code & ((1 << m) - 1)
    if has_inf and ef == (1 << e) - 1 and mf == 0:
        return "-inf" if neg else "inf"
    if s == 0 and m == 0:
        v = Fraction(2) ** (ef - bias)
    elif ef == 0:
        v = Fraction(mf, 1 << m) * Fraction(2) ** (1 - bias)
    else:
        v = (1 + Fraction(mf, 1 << m)) * Fraction(2) ** (ef - bias)
    text = repr(float(v))
    return "-" + text if neg else text


def nf4_levels():
    nd = NormalDist()
    offset = 0.9677083
    pos = [nd.inv_cdf(offset + (0.5 - offset) * i / 8) for i in range(8)]
    neg = [-nd.inv_cdf(offset + (0.5 - offset) * i / 7) for i in range(7)]
    vals = sorted(pos + neg + [0.0])
    return [v / vals[-1] for v in vals]


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--out", default=str(pathlib.Path(__file__).resolve().parent.parent / "tests" / "golden"))
    args = ap.parse_args()
    out = pathlib.Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for name, fmt in FORMATS.items():
        bits = fmt[0] + fmt[1] + fmt[2]
        lines = ["code,decoded_value"]
        lines += [f"{c},{decode(c, fmt)}" for c in range(1 << bits)]
        (out / f"{name}.csv").write_text("\n".join(lines) + "\n")
    lines = ["code,decoded_value"] + [f"{i},{v!r}" for i, v in enumerate(nf4_levels())]
    (out / "NF4.csv").write_text("\n".join(lines) + "\n")


if __name__ == "__main__":
    main()
