"""Write a small demo corpus of markdown filings for hand-driven runs.

Three documents with front matter, page markers, a regular pipe table,
and one irregular HTML table; enough to exercise ingest, query, show-run,
and serve without any model endpoints.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

DOCS = {
    "northwind": """---
doc_id: northwind
title: Northwind Logistics annual report
source: northwind.md
language: en
---
# Debt profile

Total borrowings of 480 were outstanding at year end, down from 540 a
year earlier after scheduled repayments on the term loan.

Net interest expense fell to 21 for the period.

<!-- page: 2 -->

# Liquidity

Cash and undrawn committed lines remained comfortably above the board
minimum throughout the year.

| Item | Amount |
| --- | --- |
| Cash and equivalents | 130 |
| Undrawn facility | 250 |
| Restricted deposits | 12 |

<!-- page: 3 -->

# Outlook

Management expects stable funding conditions and no refinancing needs
before the facility matures.
""",
    "meridian": """---
doc_id: meridian
title: Meridian Foods interim filing
source: meridian.md
language: en
---
# Revenue commentary

Group revenue reached 1,940 for the half, with volume growth in both
retail and food-service channels.

<!-- page: 2 -->

# Segment results

<table>
  <tr><th rowspan="2">Segment</th><th colspan="2">Revenue</th></tr>
  <tr><th>Current</th><th>Prior</th></tr>
  <tr><td>Retail</td><td>1,240</td><td>1,150</td></tr>
  <tr><td>Food service</td><td>700</td><td>655</td></tr>
</table>

# Dividend

The interim dividend was held flat pending the strategy review.
""",
    "callisto": """---
doc_id: callisto
title: Callisto Energy prospectus
source: callisto.md
language: en
---
# Capital expenditure

Committed capex of 310 covers the two onshore developments; a further
90 remains discretionary and unsanctioned.

# Covenants

The notes carry a net leverage covenant of 3.5 times, tested
semi-annually, with headroom of roughly one full turn at present.

<!-- page: 2 -->

# Hedging summary

| Instrument | Notional | Maturity |
| --- | --- | --- |
| Oil swaps | 180 | 2027 |
| Rate collars | 95 | 2028 |
""",
}


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--out", default="demo_corpus", help="target directory")
    args = parser.parse_args(argv)

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for doc_id, text in DOCS.items():
        (out / f"{doc_id}.md").write_text(text, encoding="utf-8")
    print(f"wrote {len(DOCS)} documents to {out}")
    print("next:")
    print(f"  utilrank ingest --corpus {out} --out demo_index")
    print(
        '  utilrank query --index demo_index --query "total borrowings"'
        ' --statement-text "net debt 480" --mock-judge --threshold 0.1'
    )
    print("  utilrank show-run --store demo_index/runs")
    return 0


if __name__ == "__main__":
    sys.exit(main())
