#ifndef BICLSTM_BICLSTM_HPP
#define BICLSTM_BICLSTM_HPP

// Umbrella header for the whole library.

#include "biclstm/checkpoint.hpp"
#include "biclstm/clstm.hpp"
#include "biclstm/errors.hpp"
#include "biclstm/hsi.hpp"
#include "biclstm/metrics.hpp"
#include "biclstm/network.hpp"
#include "biclstm/nn_ops.hpp"
#include "biclstm/parallel.hpp"
#include "biclstm/rng.hpp"
#include "biclstm/tensor.hpp"
#include "biclstm/train.hpp"

#endif
