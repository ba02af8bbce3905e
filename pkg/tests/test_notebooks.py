import runpy
from pathlib import Path

import pytest

NOTEBOOKS = Path(__file__).parent.parent / "notebooks"


@pytest.mark.parametrize("name", ["order_book_basics.py", "bid_acceptance.py"])
def test_example_runs(name, capsys):
    runpy.run_path(str(NOTEBOOKS / name), run_name="__main__")
    assert capsys.readouterr().out
