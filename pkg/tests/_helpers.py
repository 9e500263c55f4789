import numpy as np
import scipy.sparse as sp


def random_binary_csr(rng, shape, density):
    return sp.csr_matrix((rng.random(shape) < density).astype(float))
