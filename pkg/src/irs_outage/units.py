"""dB / dBm helpers. Everything inside the library is linear Watts."""

import numpy as np


def db2lin(x_db):
    return 10.0 ** (np.asarray(x_db, dtype=float) / 10.0)


def lin2db(x):
    return 10.0 * np.log10(np.asarray(x, dtype=float))


def dbm2watt(x_dbm):
    return 10.0 ** ((np.asarray(x_dbm, dtype=float) - 30.0) / 10.0)


def watt2dbm(x_watt):
    return 10.0 * np.log10(np.asarray(x_watt, dtype=float)) + 30.0
