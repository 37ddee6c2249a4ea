"""Rebuild data/nsw_dw.csv from the causaldata 0.1.5 source distribution.

The NSW experimental sample (Dehejia-Wahba subset, 445 rows, 185 treated)
ships as nsw_mixtape.dta inside the sdist. Earnings are converted to
thousands of 1978 dollars. The output is byte-checked against the
committed file.

    python docs/fetch_nsw.py [--out data/nsw_dw.csv] [--sdist causaldata-0.1.5.tar.gz]
"""

import argparse
import hashlib
import io
import sys
import tarfile
import urllib.request

import numpy as np
import pandas as pd

SDIST_URL = (
    "https://files.pythonhosted.org/packages/88/44/"
    "b8717ad2b847f04d164b018cb1b746cd6873804cc65d28d62b1cb2775e5b/"
    "causaldata-0.1.5.tar.gz"
)
SDIST_SHA256 = "5604fb84000c6a8ae3e93630b3624e9f2af4f8700e4465ec3586998b3522fd1c"
MEMBER = "causaldata-0.1.5/causaldata/nsw_mixtape/nsw_mixtape.dta"
CSV_SHA256 = "103d01eae040d8b97c324233659324d1f9499ea43c4d0f4608342d895508e5a5"


def convert(dta: pd.DataFrame) -> pd.DataFrame:
    out = pd.DataFrame(
        {
            "id": np.arange(1, len(dta) + 1),
            "treat": dta.treat.astype(int),
            "age": dta.age.astype(int),
            "education": dta.educ.astype(int),
            "black": dta.black.astype(int),
            "hispanic": dta.hisp.astype(int),
            "married": dta.marr.astype(int),
            "nodegree": dta.nodegree.astype(int),
        }
    )
    for col in ["re74", "re75", "re78"]:
        out[col] = [f"{round(float(v), 4) / 1000:.7f}" for v in dta[col]]
    return out


def main() -> int:
    ap = argparse.ArgumentParser()
    ap.add_argument("--out", default="data/nsw_dw.csv")
    ap.add_argument("--sdist", help="local copy of the sdist instead of downloading")
    args = ap.parse_args()

    if args.sdist:
        with open(args.sdist, "rb") as fh:
            blob = fh.read()
    else:
        blob = urllib.request.urlopen(SDIST_URL, timeout=600).read()
    got = hashlib.sha256(blob).hexdigest()
    if got != SDIST_SHA256:
        print(f"sdist checksum mismatch: {got}", file=sys.stderr)
        return 2
    with tarfile.open(fileobj=io.BytesIO(blob), mode="r:gz") as tar:
        dta = pd.read_stata(io.BytesIO(tar.extractfile(MEMBER).read()))

    text = convert(dta).to_csv(index=False)
    with open(args.out, "w", newline="") as fh:
        fh.write(text)
    got = hashlib.sha256(text.encode()).hexdigest()
    if got != CSV_SHA256:
        print(f"warning: csv checksum {got} differs from {CSV_SHA256}", file=sys.stderr)
        return 1
    print(f"wrote {args.out} ({len(dta)} rows)")
    return 0


if __name__ == "__main__":
    sys.exit(main())
