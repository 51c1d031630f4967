#pragma once

#include "bbdrec/tensor.hpp"

#include <algorithm>
#include <array>
#include <charconv>
#include <cstdint>
#include <fstream>
#include <istream>
#include <numeric>
#include <ostream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace bbdrec {

using UserId = std::int32_t;

struct Interaction {
  UserId user = 0;
  ItemId item = 0;
  std::int64_t timestamp = 0;
};

// Interaction records with internal ids: users are 0-based, items are 1-based
// (0 is padding). `user_names[u]` / `item_names[i]` hold the original ids;
// item_names[0] is a placeholder for the padding slot.
struct InteractionLog {
  std::vector<Interaction> records;
  std::vector<std::string> user_names;
  std::vector<std::string> item_names{""};

  Index n_items() const { return static_cast<Index>(item_names.size()) - 1; }
  Index n_users() const { return static_cast<Index>(user_names.size()); }
};

struct Sample {
  std::vector<ItemId> history;  // length L, left-padded with 0
  ItemId target = 0;
  UserId user = 0;
  std::int64_t timestamp = 0;  // timestamp of the target interaction
  std::int64_t order = 0;      // emission order, last sort key

  Index history_length() const {
    return static_cast<Index>(std::count_if(history.begin(), history.end(), [](ItemId i) { return i != kPaddingId; }));
  }
};

struct DatasetSplits {
  std::vector<Sample> train, valid, test;
  Index n_items = 0;
  Index history_len = 10;
  std::vector<std::string> item_names;  // index = internal id
  std::vector<std::int64_t> popularity;  // target counts in the training split, index = internal id
};

class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

namespace detail {

inline std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  return s;
}

template <typename Id>
Id intern(std::unordered_map<std::string, Id>& index, std::vector<std::string>& names, std::string_view key) {
  auto [it, inserted] = index.try_emplace(std::string(key), static_cast<Id>(names.size()));
  if (inserted) names.emplace_back(key);
  return it->second;
}

}  // namespace detail

/// Parses `user_id,item_id,timestamp` CSV text. Original ids are arbitrary
/// non-empty strings, remapped in order of first appearance; timestamps are
/// integers. Duplicate rows are kept.
inline InteractionLog parse_csv(std::istream& in, const std::string& source = "<input>") {
  InteractionLog log;
  std::unordered_map<std::string, UserId> users;
  std::unordered_map<std::string, ItemId> items;
  std::string line;
  std::size_t line_no = 0;
  bool header_seen = false;
  while (std::getline(in, line)) {
    ++line_no;
    std::string_view view = line;
    if (line_no == 1 && view.size() >= 3 && view.substr(0, 3) == "\xEF\xBB\xBF") view.remove_prefix(3);
    view = detail::trim(view);
    if (view.empty()) continue;
    std::string_view fields[3];
    std::size_t n_fields = 0;
    std::size_t start = 0;
    while (true) {
      const std::size_t comma = view.find(',', start);
      const std::string_view field = detail::trim(view.substr(start, comma == std::string_view::npos ? view.npos : comma - start));
      if (n_fields < 3) fields[n_fields] = field;
      ++n_fields;
      if (comma == std::string_view::npos) break;
      start = comma + 1;
    }
    if (!header_seen) {
      if (n_fields != 3 || fields[0] != "user_id" || fields[1] != "item_id" || fields[2] != "timestamp") {
        throw DataError(source + ":" + std::to_string(line_no) +
                        ": missing header 'user_id,item_id,timestamp'");
      }
      header_seen = true;
      continue;
    }
    const std::string where = source + ":" + std::to_string(line_no) + ": ";
    if (n_fields != 3) throw DataError(where + "expected 3 fields, got " + std::to_string(n_fields));
    if (fields[0].empty() || fields[1].empty()) throw DataError(where + "empty user or item id");
    std::int64_t ts = 0;
    const auto* first = fields[2].data();
    const auto* last = first + fields[2].size();
    const auto [ptr, ec] = std::from_chars(first, last, ts);
    if (ec != std::errc() || ptr != last) {
      throw DataError(where + "timestamp '" + std::string(fields[2]) + "' is not an integer");
    }
    Interaction rec;
    rec.user = detail::intern(users, log.user_names, fields[0]);
    rec.item = detail::intern(items, log.item_names, fields[1]);
    rec.timestamp = ts;
    log.records.push_back(rec);
  }
  if (!header_seen) throw DataError(source + ": missing header 'user_id,item_id,timestamp'");
  return log;
}

inline InteractionLog load_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path);
  return parse_csv(in, path);
}

inline void write_csv(const InteractionLog& log, std::ostream& out) {
  out << "user_id,item_id,timestamp\n";
  for (const auto& r : log.records) {
    out << log.user_names[r.user] << ',' << log.item_names[r.item] << ',' << r.timestamp << '\n';
  }
}

/// Drops items with fewer than `min_item_count` interactions, then users left
/// with fewer than `min_user_count` interactions (one pass each, no fixpoint).
/// Surviving ids are re-compacted, keeping their relative order.
inline InteractionLog preprocess(const InteractionLog& log, std::int64_t min_item_count = 5,
                                 std::int64_t min_user_count = 3) {
  if (log.records.empty()) throw DataError("preprocess: empty interaction log");
  std::vector<std::int64_t> item_count(log.item_names.size(), 0);
  for (const auto& r : log.records) ++item_count[r.item];

  std::vector<std::int64_t> user_count(log.user_names.size(), 0);
  for (const auto& r : log.records) {
    if (item_count[r.item] >= min_item_count) ++user_count[r.user];
  }

  std::vector<ItemId> item_map(log.item_names.size(), -1);
  std::vector<UserId> user_map(log.user_names.size(), -1);
  InteractionLog out;
  // Items whose every interaction belonged to a dropped user leave the vocabulary too.
  std::vector<char> item_kept(log.item_names.size(), 0);
  for (const auto& r : log.records) {
    if (item_count[r.item] >= min_item_count && user_count[r.user] >= min_user_count) item_kept[r.item] = 1;
  }
  for (std::size_t i = 1; i < log.item_names.size(); ++i) {
    if (!item_kept[i]) continue;
    item_map[i] = static_cast<ItemId>(out.item_names.size());
    out.item_names.push_back(log.item_names[i]);
  }
  for (std::size_t u = 0; u < log.user_names.size(); ++u) {
    if (user_count[u] < min_user_count) continue;
    user_map[u] = static_cast<UserId>(out.user_names.size());
    out.user_names.push_back(log.user_names[u]);
  }
  for (const auto& r : log.records) {
    if (item_count[r.item] < min_item_count || user_count[r.user] < min_user_count) continue;
    out.records.push_back({user_map[r.user], item_map[r.item], r.timestamp});
  }
  if (out.records.empty()) throw DataError("preprocess: no interactions survive filtering");
  return out;
}

/// One sample per interaction after a user's first: the target is that
/// interaction and the history is up to `history_len` preceding items.
/// Each user's interactions are stably sorted by timestamp first.
inline std::vector<Sample> build_samples(const InteractionLog& log, Index history_len = 10) {
  if (history_len < 1) throw std::invalid_argument("build_samples: history length must be >= 1");
  std::vector<std::vector<const Interaction*>> per_user(log.user_names.size());
  for (const auto& r : log.records) per_user[r.user].push_back(&r);

  std::vector<Sample> samples;
  std::int64_t order = 0;
  for (auto& seq : per_user) {
    std::stable_sort(seq.begin(), seq.end(),
                     [](const Interaction* a, const Interaction* b) { return a->timestamp < b->timestamp; });
    for (std::size_t i = 1; i < seq.size(); ++i) {
      Sample s;
      s.history.assign(history_len, kPaddingId);
      const std::size_t n = std::min<std::size_t>(i, static_cast<std::size_t>(history_len));
      for (std::size_t k = 0; k < n; ++k) s.history[history_len - n + k] = seq[i - n + k]->item;
      s.target = seq[i]->item;
      s.user = seq[i]->user;
      s.timestamp = seq[i]->timestamp;
      s.order = order++;
      samples.push_back(std::move(s));
    }
  }
  return samples;
}

/// Global chronological split: stable sort by (timestamp, user, emission
/// order), then floor-sized train and validation cuts; the remainder is test.
inline DatasetSplits split_chronological(std::vector<Sample> samples, const InteractionLog& log,
                                         std::array<int, 3> ratios = {8, 1, 1}) {
  if (samples.size() < 10) {
    throw DataError("split_chronological: need at least 10 samples, got " + std::to_string(samples.size()));
  }
  if (ratios[0] <= 0 || ratios[1] < 0 || ratios[2] < 0) throw std::invalid_argument("split ratios must be positive");
  std::stable_sort(samples.begin(), samples.end(), [](const Sample& a, const Sample& b) {
    if (a.timestamp != b.timestamp) return a.timestamp < b.timestamp;
    if (a.user != b.user) return a.user < b.user;
    return a.order < b.order;
  });
  const auto n = static_cast<std::int64_t>(samples.size());
  const std::int64_t total = ratios[0] + ratios[1] + ratios[2];
  const std::int64_t n_train = n * ratios[0] / total;
  const std::int64_t n_valid = n * ratios[1] / total;

  DatasetSplits out;
  out.n_items = log.n_items();
  out.history_len = static_cast<Index>(samples.front().history.size());
  out.item_names = log.item_names;
  out.train.assign(std::make_move_iterator(samples.begin()), std::make_move_iterator(samples.begin() + n_train));
  out.valid.assign(std::make_move_iterator(samples.begin() + n_train),
                   std::make_move_iterator(samples.begin() + n_train + n_valid));
  out.test.assign(std::make_move_iterator(samples.begin() + n_train + n_valid), std::make_move_iterator(samples.end()));
  out.popularity.assign(static_cast<std::size_t>(out.n_items) + 1, 0);
  for (const auto& s : out.train) ++out.popularity[s.target];
  return out;
}

/// load -> preprocess -> build_samples -> split, as used by the CLI.
inline DatasetSplits prepare_dataset(const InteractionLog& raw, Index history_len = 10) {
  const InteractionLog log = preprocess(raw);
  return split_chronological(build_samples(log, history_len), log);
}

struct SynthParams {
  Index n_items = 100;
  double p_noise = 0.0;
  Index n_users = 2000;
  Index min_len = 11;
  Index max_len = 11;
  std::int64_t start_spread = 1000;  // user start times are uniform on [0, start_spread]
  std::uint64_t seed = 0;
};

/// Cyclic Markov walks: the next item is (current + 1) mod n_items with
/// probability 1 - p_noise, otherwise uniform. Original item ids are
/// "0".."n_items-1" (internal id = original + 1). Each user starts at a
/// random time and interacts once per time unit, so a chronological split
/// sees every history length.
inline InteractionLog synth_markov(const SynthParams& p) {
  if (p.n_items < 3) throw std::invalid_argument("synth_markov: n_items must be >= 3");
  if (!(p.p_noise >= 0.0 && p.p_noise < 1.0)) throw std::invalid_argument("synth_markov: p_noise must be in [0, 1)");
  if (p.n_users < 1) throw std::invalid_argument("synth_markov: n_users must be >= 1");
  if (p.min_len < 2 || p.max_len < p.min_len) throw std::invalid_argument("synth_markov: invalid length range");
  if (p.start_spread < 0) throw std::invalid_argument("synth_markov: start_spread must be >= 0");

  InteractionLog log;
  for (Index i = 0; i < p.n_items; ++i) log.item_names.push_back(std::to_string(i));
  Rng rng(p.seed);
  std::uniform_int_distribution<Index> item(0, p.n_items - 1);
  std::uniform_int_distribution<Index> length(p.min_len, p.max_len);
  std::bernoulli_distribution noisy(p.p_noise);
  std::uniform_int_distribution<std::int64_t> start(0, p.start_spread);
  for (Index u = 0; u < p.n_users; ++u) {
    log.user_names.push_back("u" + std::to_string(u));
    const Index len = length(rng);
    const std::int64_t t0 = start(rng);
    Index cur = item(rng);
    for (Index i = 0; i < len; ++i) {
      log.records.push_back({static_cast<UserId>(u), static_cast<ItemId>(cur + 1), t0 + static_cast<std::int64_t>(i)});
      cur = (p.p_noise > 0.0 && noisy(rng)) ? item(rng) : (cur + 1) % p.n_items;
    }
  }
  return log;
}

/// Columnar text dump of one split: one sample per line,
/// `user<TAB>timestamp<TAB>target<TAB>h_1,...,h_L` with internal ids.
inline void write_split(const std::vector<Sample>& samples, std::ostream& out) {
  out << "user\ttimestamp\ttarget\thistory\n";
  for (const auto& s : samples) {
    out << s.user << '\t' << s.timestamp << '\t' << s.target << '\t';
    for (std::size_t k = 0; k < s.history.size(); ++k) out << (k ? "," : "") << s.history[k];
    out << '\n';
  }
}

}  // namespace bbdrec
