#pragma once

#include "bbdrec/bbdrec.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <vector>

namespace bbdrec::testing {

inline Vector<double> vec(std::initializer_list<double> v) {
  Vector<double> out(static_cast<Index>(v.size()));
  Index i = 0;
  for (double x : v) out[i++] = x;
  return out;
}

inline double rel(double a, double b) {
  const double d = std::abs(a - b);
  return b == 0.0 ? d : d / std::abs(b);
}

inline ModelShape tiny_shape(EncoderMode mode = EncoderMode::transformer, bool conditional = false) {
  ModelShape s;
  s.n_items = 6;
  s.dim = 4;
  s.max_len = 3;
  s.ffn_dim = 4;
  s.time_dim = 4;
  s.hidden = 8;
  s.steps = 5;
  s.dropout = 0.0;
  s.encoder = mode;
  s.conditional = conditional;
  return s;
}

inline Sample make_sample(std::vector<ItemId> history, ItemId target, std::int64_t ts = 0, UserId user = 0) {
  Sample s;
  s.history = std::move(history);
  s.target = target;
  s.timestamp = ts;
  s.user = user;
  return s;
}

// Cyclic walk splits small enough for unit tests.
inline DatasetSplits small_cycle_splits(Index n_users = 300, Index n_items = 20, std::uint64_t seed = 5) {
  SynthParams p;
  p.n_items = n_items;
  p.n_users = n_users;
  p.seed = seed;
  return prepare_dataset(synth_markov(p), 10);
}

}  // namespace bbdrec::testing
