from fractions import Fraction

import pytest
from hypothesis import settings

from cidlab.market import BUY, SELL, Order, OrderBook, match_insert

settings.register_profile("default", max_examples=60, deadline=None)
settings.load_profile("default")

# reference Q1 book: (side, volume MW, price €/MWh) in arrival order
Q1_ORDERS = [(SELL, "6.25", 36.3), (SELL, "2.35", 34.5), (BUY, "3.15", 33.8), (BUY, "1.125", 29.3),
             (BUY, "2.5", 15.9)]


def build_book(rows, product=1, book=None):
    book = book or OrderBook()
    for side, vol, price in rows:
        _, book = match_insert(book, Order(book.next_id(), product, side, Fraction(vol), price))
    return book


@pytest.fixture
def q1_book():
    return build_book(Q1_ORDERS)


def pytest_terminal_summary(terminalreporter):
    mod = __import__("sys").modules.get("test_acceptance")
    lines = getattr(mod, "RESULTS", [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
