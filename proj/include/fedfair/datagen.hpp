#pragma once

// Synthetic multi-client classification data, stratified splitting, per-client
// class rebalancing and the dataset CSV format.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "fedfair/csv.hpp"
#include "fedfair/errors.hpp"
#include "fedfair/numkit.hpp"

namespace fedfair {

struct SyntheticConfig {
  std::size_t num_clients = 6;
  std::size_t num_classes = 9;
  std::size_t feature_dim = 16;
  // Client sizes follow the skin-type histogram 2944/4807/3306/2781/1531/634 scaled by 1/20.
  std::vector<std::size_t> client_sizes{147, 240, 165, 139, 77, 32};
  double client_shift_scale = 1.0;
  std::vector<double> client_noise_scales{1.0, 1.16, 1.32, 1.48, 1.64, 1.8};
  double anchor_scale = 3.0;
  std::uint64_t seed = 0;

  void validate() const {
    if (num_clients < 1) throw ValidationError("data.num_clients must be >= 1");
    if (num_classes < 2) throw ValidationError("data.num_classes must be >= 2");
    if (feature_dim < 1) throw ValidationError("data.feature_dim must be >= 1");
    if (client_sizes.size() != num_clients) {
      throw ValidationError("data.client_sizes must list one size per client");
    }
    if (client_noise_scales.size() != num_clients) {
      throw ValidationError("data.client_noise_scales must list one scale per client");
    }
    for (auto s : client_sizes) {
      if (s < num_classes) throw ValidationError("every client size must be >= num_classes");
    }
    for (double s : client_noise_scales) {
      if (!(s > 0.0) || !std::isfinite(s)) throw ValidationError("noise scales must be positive");
    }
    if (!(client_shift_scale >= 0.0) || !std::isfinite(client_shift_scale)) {
      throw ValidationError("data.client_shift_scale must be >= 0");
    }
    if (!(anchor_scale > 0.0)) throw ValidationError("data.anchor_scale must be positive");
  }

  // Noise rising linearly from `first` (client 0) to `last` (final client).
  static std::vector<double> linear_noise(std::size_t num_clients, double first, double last) {
    std::vector<double> out(num_clients, first);
    for (std::size_t c = 1; c < num_clients; ++c) {
      out[c] = first + (last - first) * static_cast<double>(c) / static_cast<double>(num_clients - 1);
    }
    return out;
  }

  friend bool operator==(const SyntheticConfig&, const SyntheticConfig&) = default;
};

enum class Split : std::uint8_t { train, val, test };

inline std::string_view to_string(Split s) {
  switch (s) {
    case Split::train: return "train";
    case Split::val: return "val";
    case Split::test: return "test";
  }
  return "train";
}

struct Dataset {
  std::size_t num_classes = 0;
  Matrix features;
  std::vector<std::size_t> labels;
  std::vector<std::size_t> client_ids;
  std::vector<Split> split_tags;

  std::size_t size() const noexcept { return labels.size(); }
  std::size_t feature_dim() const noexcept { return features.cols(); }

  std::size_t num_clients() const {
    return client_ids.empty() ? 0 : *std::max_element(client_ids.begin(), client_ids.end()) + 1;
  }

  void validate() const {
    const std::size_t n = labels.size();
    if (features.rows() != n || client_ids.size() != n || split_tags.size() != n) {
      throw ValidationError("dataset arrays have different lengths");
    }
    for (auto l : labels) {
      if (l >= num_classes) throw ValidationError("dataset label out of range");
    }
    if (!features.all_finite()) throw ValidationError("dataset has non-finite features");
  }

  friend bool operator==(const Dataset&, const Dataset&) = default;
};

struct ClientPartition {
  std::size_t client_id = 0;
  std::vector<std::size_t> train;
  std::vector<std::size_t> val;
  std::vector<std::size_t> test;

  friend bool operator==(const ClientPartition&, const ClientPartition&) = default;
};

// Per client c and class k, samples ~ N(anchor_k + shift_c, noise_c^2 I).
inline Dataset generate_synthetic(const SyntheticConfig& cfg) {
  cfg.validate();
  const std::size_t d = cfg.feature_dim;

  auto random_direction = [d](RngStream& rng) {
    std::vector<double> v(d);
    double norm = 0.0;
    do {
      norm = 0.0;
      for (double& x : v) {
        x = rng.normal();
        norm += x * x;
      }
    } while (norm == 0.0);
    norm = std::sqrt(norm);
    for (double& x : v) x /= norm;
    return v;
  };

  std::vector<std::vector<double>> anchors;
  {
    RngStream rng(cfg.seed, derive_stream_id({stream_tag::kAnchors}));
    for (std::size_t k = 0; k < cfg.num_classes; ++k) {
      auto dir = random_direction(rng);
      for (double& x : dir) x *= cfg.anchor_scale;
      anchors.push_back(std::move(dir));
    }
  }

  std::size_t total = 0;
  for (auto s : cfg.client_sizes) total += s;

  Dataset ds;
  ds.num_classes = cfg.num_classes;
  ds.features = Matrix(total, d);
  ds.labels.reserve(total);
  ds.client_ids.reserve(total);
  ds.split_tags.assign(total, Split::train);

  std::size_t row = 0;
  for (std::size_t c = 0; c < cfg.num_clients; ++c) {
    RngStream shift_rng(cfg.seed, derive_stream_id({stream_tag::kClientShift, c}));
    auto shift = random_direction(shift_rng);
    for (double& x : shift) x *= cfg.client_shift_scale;

    RngStream rng(cfg.seed, derive_stream_id({stream_tag::kSamples, c}));
    const std::size_t n = cfg.client_sizes[c];
    const std::size_t base = n / cfg.num_classes;
    const std::size_t extra = n % cfg.num_classes;
    for (std::size_t k = 0; k < cfg.num_classes; ++k) {
      const std::size_t count = base + (k < extra ? 1 : 0);
      for (std::size_t i = 0; i < count; ++i, ++row) {
        auto out = ds.features.row(row);
        for (std::size_t j = 0; j < d; ++j) {
          out[j] = anchors[k][j] + shift[j] + cfg.client_noise_scales[c] * rng.normal();
        }
        ds.labels.push_back(k);
        ds.client_ids.push_back(c);
      }
    }
  }
  return ds;
}

struct SplitFractions {
  double train = 0.6;
  double val = 0.2;
  double test = 0.2;
};

namespace detail {

// Largest-remainder apportionment of `target` units over classes with quotas
// fraction * count[k], never exceeding capacity[k]. Ties go to the lower class index.
inline std::vector<std::size_t> apportion(std::span<const std::size_t> counts,
                                          std::span<const std::size_t> capacity, double fraction,
                                          std::size_t target) {
  const std::size_t k = counts.size();
  std::vector<std::size_t> out(k, 0);
  std::vector<double> remainder(k, 0.0);
  std::size_t assigned = 0;
  for (std::size_t i = 0; i < k; ++i) {
    const double quota = fraction * static_cast<double>(counts[i]);
    out[i] = std::min(static_cast<std::size_t>(std::floor(quota)), capacity[i]);
    remainder[i] = quota - std::floor(quota);
    assigned += out[i];
  }
  std::vector<std::size_t> order(k);
  for (std::size_t i = 0; i < k; ++i) order[i] = i;
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return remainder[a] > remainder[b]; });
  for (std::size_t pass = 0; pass < 2 && assigned < target; ++pass) {
    for (auto i : order) {
      if (assigned >= target) break;
      // First pass only tops up classes with a fractional quota; second pass fills anywhere.
      if (pass == 0 && remainder[i] == 0.0) continue;
      if (out[i] < capacity[i] && static_cast<double>(out[i]) < fraction * counts[i] + 1.0) {
        ++out[i];
        ++assigned;
      }
    }
  }
  return out;
}

}  // namespace detail

// Per-client split stratified by class. Client-level val/test totals are the
// rounded fractions of the client size, apportioned over classes so each
// class's share is within one sample of its exact fraction; the rest is train.
inline std::vector<ClientPartition> split_dataset(const Dataset& ds, SplitFractions fractions,
                                                  std::uint64_t seed) {
  ds.validate();
  const double total_fraction = fractions.train + fractions.val + fractions.test;
  if (std::abs(total_fraction - 1.0) > 1e-9 || fractions.val < 0 || fractions.test < 0 ||
      fractions.train < 0) {
    throw ValidationError("split fractions must be non-negative and sum to 1");
  }

  const std::size_t num_clients = ds.num_clients();
  // by_class[c][k] = sample indices of client c, class k, in ascending order.
  std::vector<std::vector<std::vector<std::size_t>>> by_class(
      num_clients, std::vector<std::vector<std::size_t>>(ds.num_classes));
  for (std::size_t i = 0; i < ds.size(); ++i) by_class[ds.client_ids[i]][ds.labels[i]].push_back(i);

  std::vector<ClientPartition> parts;
  parts.reserve(num_clients);
  for (std::size_t c = 0; c < num_clients; ++c) {
    std::vector<std::size_t> counts(ds.num_classes);
    std::size_t n = 0;
    for (std::size_t k = 0; k < ds.num_classes; ++k) {
      counts[k] = by_class[c][k].size();
      n += counts[k];
    }
    if (n < 5) {
      throw ValidationError("client " + std::to_string(c) + " has " + std::to_string(n) +
                            " samples, at least 5 are needed to split");
    }
    const auto val_target = static_cast<std::size_t>(std::llround(fractions.val * static_cast<double>(n)));
    const auto test_target = static_cast<std::size_t>(std::llround(fractions.test * static_cast<double>(n)));

    auto val_counts = detail::apportion(counts, counts, fractions.val, val_target);
    std::vector<std::size_t> left(ds.num_classes);
    for (std::size_t k = 0; k < ds.num_classes; ++k) left[k] = counts[k] - val_counts[k];
    auto test_counts = detail::apportion(counts, left, fractions.test, test_target);

    ClientPartition part;
    part.client_id = c;
    for (std::size_t k = 0; k < ds.num_classes; ++k) {
      auto members = by_class[c][k];
      RngStream rng(seed, derive_stream_id({stream_tag::kSplit, c, k}));
      rng.shuffle(std::span<std::size_t>(members));
      std::size_t pos = 0;
      for (std::size_t i = 0; i < val_counts[k]; ++i) part.val.push_back(members[pos++]);
      for (std::size_t i = 0; i < test_counts[k]; ++i) part.test.push_back(members[pos++]);
      while (pos < members.size()) part.train.push_back(members[pos++]);
    }
    std::sort(part.train.begin(), part.train.end());
    std::sort(part.val.begin(), part.val.end());
    std::sort(part.test.begin(), part.test.end());
    parts.push_back(std::move(part));
  }
  return parts;
}

inline std::vector<ClientPartition> split_dataset(const Dataset& ds, std::uint64_t seed) {
  return split_dataset(ds, SplitFractions{}, seed);
}

// Writes partition membership into ds.split_tags.
inline void apply_split_tags(Dataset& ds, std::span<const ClientPartition> parts) {
  for (const auto& p : parts) {
    for (auto i : p.train) ds.split_tags.at(i) = Split::train;
    for (auto i : p.val) ds.split_tags.at(i) = Split::val;
    for (auto i : p.test) ds.split_tags.at(i) = Split::test;
  }
}

// Rebuilds partitions from a tagged dataset (e.g. one read from CSV).
inline std::vector<ClientPartition> partitions_from_tags(const Dataset& ds) {
  std::vector<ClientPartition> parts(ds.num_clients());
  for (std::size_t c = 0; c < parts.size(); ++c) parts[c].client_id = c;
  for (std::size_t i = 0; i < ds.size(); ++i) {
    auto& p = parts[ds.client_ids[i]];
    switch (ds.split_tags[i]) {
      case Split::train: p.train.push_back(i); break;
      case Split::val: p.val.push_back(i); break;
      case Split::test: p.test.push_back(i); break;
    }
  }
  return parts;
}

// Oversamples minority classes of the train list with replacement until every
// class present matches the majority count. Extra indices are appended.
inline ClientPartition rebalance_by_resampling(const ClientPartition& partition, const Dataset& ds,
                                               std::uint64_t seed) {
  if (partition.train.empty()) throw ValidationError("rebalance: empty train split");
  std::map<std::size_t, std::vector<std::size_t>> by_class;
  for (auto i : partition.train) by_class[ds.labels.at(i)].push_back(i);
  std::size_t majority = 0;
  for (const auto& [k, members] : by_class) majority = std::max(majority, members.size());

  ClientPartition out = partition;
  for (const auto& [k, members] : by_class) {
    RngStream rng(seed, derive_stream_id({stream_tag::kResample, partition.client_id, k}));
    for (std::size_t i = members.size(); i < majority; ++i) {
      out.train.push_back(members[rng.uniform_index(members.size())]);
    }
  }
  return out;
}

inline constexpr std::string_view kDatasetHeaderPrefix = "client_id,split,label";

inline std::string dataset_header(std::size_t feature_dim) {
  std::string header(kDatasetHeaderPrefix);
  for (std::size_t j = 0; j < feature_dim; ++j) header += ",f" + std::to_string(j);
  return header;
}

inline std::string dataset_to_csv(const Dataset& ds) {
  ds.validate();
  std::string out = dataset_header(ds.feature_dim()) + "\n";
  for (std::size_t i = 0; i < ds.size(); ++i) {
    out += std::to_string(ds.client_ids[i]);
    out += ',';
    out += to_string(ds.split_tags[i]);
    out += ',';
    out += std::to_string(ds.labels[i]);
    for (double v : ds.features.row(i)) {
      out += ',';
      out += csv::format_double(v);
    }
    out += '\n';
  }
  return out;
}

inline void write_dataset_csv(const std::string& path, const Dataset& ds) {
  csv::write_text(path, dataset_to_csv(ds));
}

inline Dataset dataset_from_lines(const std::vector<std::string>& lines, std::size_t num_classes) {
  if (lines.empty()) throw ParseError(1, "empty dataset file");
  const auto header = csv::split(lines.front());
  if (header.size() < 4 || csv::trim(lines.front()).substr(0, kDatasetHeaderPrefix.size()) != kDatasetHeaderPrefix) {
    throw ParseError(1, "dataset header must start with 'client_id,split,label,f0'");
  }
  const std::size_t d = header.size() - 3;
  for (std::size_t j = 0; j < d; ++j) {
    if (csv::trim(header[3 + j]) != "f" + std::to_string(j)) {
      throw ParseError(1, "dataset header feature column " + std::to_string(j) + " must be f" + std::to_string(j));
    }
  }

  Dataset ds;
  ds.num_classes = num_classes;
  std::vector<double> values;
  for (std::size_t li = 1; li < lines.size(); ++li) {
    const std::size_t line_no = li + 1;
    if (csv::trim(lines[li]).empty()) continue;
    const auto fields = csv::split(lines[li]);
    if (fields.size() != d + 3) {
      throw ParseError(line_no, "expected " + std::to_string(d + 3) + " fields, found " +
                                    std::to_string(fields.size()));
    }
    ds.client_ids.push_back(csv::parse_index(fields[0], line_no, "client_id"));
    const auto tag = csv::trim(fields[1]);
    if (tag == "train") ds.split_tags.push_back(Split::train);
    else if (tag == "val") ds.split_tags.push_back(Split::val);
    else if (tag == "test") ds.split_tags.push_back(Split::test);
    else throw ParseError(line_no, "split must be train, val or test, found '" + std::string(tag) + "'");
    const auto label = csv::parse_index(fields[2], line_no, "label");
    if (label >= num_classes) {
      throw ParseError(line_no, "label " + std::to_string(label) + " >= num_classes " + std::to_string(num_classes));
    }
    ds.labels.push_back(label);
    for (std::size_t j = 0; j < d; ++j) {
      const double v = csv::parse_double(fields[3 + j], line_no, "f" + std::to_string(j));
      if (!std::isfinite(v)) throw ParseError(line_no, "non-finite feature f" + std::to_string(j));
      values.push_back(v);
    }
  }
  if (ds.labels.empty()) throw ParseError(lines.size(), "dataset file has a header but no rows");
  ds.features = Matrix(ds.labels.size(), d, std::move(values));
  return ds;
}

inline Dataset read_dataset_csv(const std::string& path, std::size_t num_classes) {
  return dataset_from_lines(csv::read_lines(path), num_classes);
}

}  // namespace fedfair
