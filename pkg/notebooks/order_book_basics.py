"""
Order books and aggressive matching
===================================

Build a small quarter-hour book, hit it with a market-crossing order and look
at the depth features the policy sees.
"""
from fractions import Fraction

import numpy as np

from cidlab.features import book_features
from cidlab.market import BUY, SELL, Order, OrderBook, aggregate_depth, match_insert

###############################################################################
# A resting book
# --------------
# Orders arrive one at a time. Those that do not cross rest in the book.

book = OrderBook()
for side, volume, price in [(SELL, "6.25", 36.3), (SELL, "2.35", 34.5), (BUY, "3.15", 33.8),
                            (BUY, "1.125", 29.3), (BUY, "2.5", 15.9)]:
    _, book = match_insert(book, Order(book.next_id(), 1, side, Fraction(volume), price))

print("best bid", book.best_bid(1).price, "best ask", book.best_ask(1).price)

###############################################################################
# Crossing the spread
# -------------------
# A Buy of 3 MW at 35 EUR/MWh takes the 2.35 MW offer at its own price and
# leaves the rest in the book.

trades, book = match_insert(book, Order(book.next_id(), 1, BUY, Fraction(3), 35.0))
for t in trades:
    print(f"traded {float(t.volume):.3f} MW at {t.price:.2f}")
print("new best bid", book.best_bid(1).price)

###############################################################################
# Depth curves and features
# -------------------------

print("sell depth", aggregate_depth(book, SELL).points)
print("buy depth", aggregate_depth(book, BUY).points)
print("features", np.round(book_features(book).as_array(), 3))
