// SPDX-License-Identifier: Apache-2.0
#include "core/data_io.hpp"

#include "core/errors.hpp"
#include "core/binary_io.hpp"
#include "core/random.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <ctime>
#include <fstream>
#include <numbers>
#include <sstream>

namespace testam {

int RoadNetwork::degree(int n) const {
  int d = 0;
  for (int j = 0; j < num_nodes; ++j)
    d += adjacency[static_cast<std::size_t>(n) * num_nodes + j] != 0.0f;
  return d;
}

void SyntheticConfig::validate() const {
  require(n_nodes >= 1, "synthetic.n_nodes must be >= 1", ErrorKind::Config);
  require(steps_per_day > 0 && 1440 % steps_per_day == 0,
          "synthetic.steps_per_day must divide 1440", ErrorKind::Config);
  require(n_days >= 1, "synthetic.n_days must be >= 1", ErrorKind::Config);
  require(n_isolated >= 0 && n_event_nodes >= 0 &&
              n_isolated + n_event_nodes <= n_nodes,
          "synthetic.n_isolated + synthetic.n_event_nodes must be <= n_nodes",
          ErrorKind::Config);
  require(event_rate >= 0.0, "synthetic.event_rate must be >= 0",
          ErrorKind::Config);
  require(noise_std >= 0.0, "synthetic.noise_std must be >= 0",
          ErrorKind::Config);
  require(v_max > 0.0, "synthetic.v_max must be > 0", ErrorKind::Config);
  require(radius > 0.0, "synthetic.radius must be > 0", ErrorKind::Config);
  require(self_weight >= 0.0 && self_weight <= 1.0,
          "synthetic.self_weight must be in [0, 1]", ErrorKind::Config);
}

// ---------------------------------------------------------------------------
// CSV

namespace {

std::vector<std::string> split_csv_line(const std::string &line) {
  std::vector<std::string> cells;
  std::string cell;
  std::istringstream in(line);
  while (std::getline(in, cell, ','))
    cells.push_back(cell);
  if (!line.empty() && line.back() == ',')
    cells.emplace_back();
  return cells;
}

std::string trim(std::string s) {
  const auto not_space = [](unsigned char c) { return !std::isspace(c); };
  s.erase(s.begin(), std::find_if(s.begin(), s.end(), not_space));
  s.erase(std::find_if(s.rbegin(), s.rend(), not_space).base(), s.end());
  return s;
}

std::int64_t parse_iso8601(const std::string &text, std::size_t row) {
  int y = 0, mo = 0, d = 0, h = 0, mi = 0, s = 0;
  char sep = 0;
  const int got = std::sscanf(text.c_str(), "%d-%d-%d%c%d:%d:%d", &y, &mo, &d,
                              &sep, &h, &mi, &s);
  if (got < 6 || (sep != 'T' && sep != ' '))
    fail(ErrorKind::Format, "row " + std::to_string(row) +
                                ": bad ISO-8601 timestamp '" + text + "'");
  std::tm tm{};
  tm.tm_year = y - 1900;
  tm.tm_mon = mo - 1;
  tm.tm_mday = d;
  tm.tm_hour = h;
  tm.tm_min = mi;
  tm.tm_sec = got == 7 ? s : 0;
  return static_cast<std::int64_t>(timegm(&tm));
}

} // namespace

GraphSignalSeries load_csv(const std::filesystem::path &path) {
  std::ifstream in(path);
  if (!in)
    fail(ErrorKind::Io, "cannot open " + path.string());
  std::string line;
  if (!std::getline(in, line))
    fail(ErrorKind::Format, path.string() + ": empty file");
  auto header = split_csv_line(line);
  if (header.size() < 2)
    fail(ErrorKind::Format, path.string() + ": header needs a node column");
  GraphSignalSeries series;
  for (std::size_t c = 1; c < header.size(); ++c)
    series.node_ids.push_back(trim(header[c]));
  const std::size_t n_nodes = series.node_ids.size();

  std::size_t row = 1;
  while (std::getline(in, line)) {
    ++row;
    if (!line.empty() && line.back() == '\r')
      line.pop_back();
    if (trim(line).empty())
      continue;
    auto cells = split_csv_line(line);
    if (cells.size() != n_nodes + 1)
      fail(ErrorKind::Format, "row " + std::to_string(row) + ": expected " +
                                  std::to_string(n_nodes + 1) + " cells, got " +
                                  std::to_string(cells.size()));
    series.timestamps.push_back(parse_iso8601(trim(cells[0]), row));
    for (std::size_t c = 1; c < cells.size(); ++c) {
      const std::string cell = trim(cells[c]);
      if (cell.empty()) {
        series.values.push_back(0.0f);
        continue;
      }
      char *end = nullptr;
      const float v = std::strtof(cell.c_str(), &end);
      if (end != cell.c_str() + cell.size() || !std::isfinite(v))
        fail(ErrorKind::Format, "row " + std::to_string(row) + ", column " +
                                    std::to_string(c + 1) +
                                    ": non-numeric cell '" + cell + "'");
      series.values.push_back(v);
    }
  }
  require(!series.timestamps.empty(), path.string() + ": no data rows",
          ErrorKind::Format);
  if (series.timestamps.size() >= 2) {
    const std::int64_t step = series.timestamps[1] - series.timestamps[0];
    for (std::size_t t = 1; t < series.timestamps.size(); ++t)
      if (series.timestamps[t] - series.timestamps[t - 1] != step || step <= 0)
        fail(ErrorKind::Format,
             "non-uniform interval at data row " + std::to_string(t + 1));
    if (step % 60 != 0 || 86400 % step != 0)
      fail(ErrorKind::Format, "interval must be whole minutes dividing a day");
    series.interval_minutes = static_cast<int>(step / 60);
  }
  series.validate();
  return series;
}

// ---------------------------------------------------------------------------
// Binary bundle. All multi-byte fields are little-endian:
//   "TSTM" | u16 version | u16 byte-order mark 0xFEFF | u32 interval_minutes
//   | u64 T | u64 N | T x u64 timestamps | N x (u32 len, bytes) node ids
//   | T*N x f32 values (row-major) | u8 has_tags
//   | [N x u8 node class | N x u8 event node | T*N x u8 event mask]
//   | u32 CRC-32 of every preceding byte

namespace {

constexpr std::uint16_t kByteOrderMark = 0xFEFF;

} // namespace

void save_bundle(const GraphSignalSeries &series,
                 const std::optional<ScenarioTags> &tags,
                 const std::filesystem::path &path) {
  series.validate();
  const std::size_t T = series.num_steps(), N = series.num_nodes();
  BinaryWriter w;
  w.bytes(kBundleMagic, 4);
  w.put<std::uint16_t>(kBundleVersion);
  w.put<std::uint16_t>(kByteOrderMark);
  w.put<std::uint32_t>(static_cast<std::uint32_t>(series.interval_minutes));
  w.put<std::uint64_t>(T);
  w.put<std::uint64_t>(N);
  for (std::int64_t ts : series.timestamps) {
    require(ts >= 0, "bundle timestamps must be non-negative epoch seconds");
    w.put<std::uint64_t>(static_cast<std::uint64_t>(ts));
  }
  for (const auto &id : series.node_ids) {
    w.put<std::uint32_t>(static_cast<std::uint32_t>(id.size()));
    w.bytes(id.data(), id.size());
  }
  for (float v : series.values)
    w.put<float>(v);
  w.put<std::uint8_t>(tags ? 1 : 0);
  if (tags) {
    require(tags->node_class.size() == N && tags->event_node.size() == N &&
                tags->event_mask.size() == T * N,
            "scenario tags do not match series shape");
    for (NodeClass c : tags->node_class)
      w.put<std::uint8_t>(static_cast<std::uint8_t>(c));
    for (std::uint8_t e : tags->event_node)
      w.put<std::uint8_t>(e);
    for (std::uint8_t e : tags->event_mask)
      w.put<std::uint8_t>(e);
  }
  w.put<std::uint32_t>(crc_of(w.data().data(), w.data().size()));

  write_file(path, w.data());
}

Bundle load_bundle(const std::filesystem::path &path) {
  const std::vector<char> buf = read_file(path);
  if (buf.size() < 4 || std::memcmp(buf.data(), kBundleMagic, 4) != 0)
    fail(ErrorKind::Format, path.string() + ": magic-number mismatch");
  if (buf.size() < 8 + 4)
    fail(ErrorKind::Format, "checksum failure");
  const std::size_t body = buf.size() - 4;
  {
    // The trailing CRC covers every byte before it.
    BinaryReader r(buf, buf.size());
    r.str(body);
    const std::uint32_t stored = r.get<std::uint32_t>();
    if (stored != crc_of(buf.data(), body))
      fail(ErrorKind::Format, "checksum failure");
  }
  BinaryReader r(buf, body);
  r.str(4);
  const auto version = r.get<std::uint16_t>();
  if (version != kBundleVersion)
    fail(ErrorKind::Format, "version mismatch: file has " +
                                std::to_string(version) + ", expected " +
                                std::to_string(kBundleVersion));
  if (r.get<std::uint16_t>() != kByteOrderMark)
    fail(ErrorKind::Format, "unsupported byte order (expected little-endian)");
  Bundle b;
  GraphSignalSeries &s = b.series;
  s.interval_minutes = static_cast<int>(r.get<std::uint32_t>());
  const auto T = r.get<std::uint64_t>();
  const auto N = r.get<std::uint64_t>();
  if (T * N > body)
    fail(ErrorKind::Format, "checksum failure");
  s.timestamps.resize(T);
  for (auto &ts : s.timestamps)
    ts = static_cast<std::int64_t>(r.get<std::uint64_t>());
  for (std::uint64_t n = 0; n < N; ++n)
    s.node_ids.push_back(r.str(r.get<std::uint32_t>()));
  s.values.resize(T * N);
  for (auto &v : s.values)
    v = r.get<float>();
  if (r.get<std::uint8_t>() != 0) {
    ScenarioTags tags;
    tags.node_class.resize(N);
    for (auto &c : tags.node_class)
      c = static_cast<NodeClass>(r.get<std::uint8_t>());
    tags.event_node.resize(N);
    for (auto &e : tags.event_node)
      e = r.get<std::uint8_t>();
    tags.event_mask.resize(T * N);
    for (auto &e : tags.event_mask)
      e = r.get<std::uint8_t>();
    b.tags = std::move(tags);
  }
  if (r.pos() != body)
    fail(ErrorKind::Format, "trailing bytes in bundle");
  s.validate();
  return b;
}

Bundle load_dataset(const std::filesystem::path &path) {
  std::ifstream in(path, std::ios::binary);
  if (!in)
    fail(ErrorKind::Io, "cannot open " + path.string());
  char magic[4] = {};
  in.read(magic, 4);
  if (in.gcount() == 4 && std::memcmp(magic, kBundleMagic, 4) == 0)
    return load_bundle(path);
  return Bundle{load_csv(path), std::nullopt};
}

// ---------------------------------------------------------------------------
// Synthetic scenarios

namespace {

// RNG stream layout: one stream per concern and node so that any part can be
// regenerated without replaying the others.
constexpr std::uint64_t kLayoutStream = 0;
constexpr std::uint64_t kProfileStream = 1000;
constexpr std::uint64_t kEventStream = 2000000;
constexpr std::uint64_t kNoiseStream = 3000000;

double raised_cosine(double hour, double center, double half_width) {
  double d = std::abs(hour - center);
  d = std::min(d, 24.0 - d);
  if (d >= half_width)
    return 0.0;
  return 0.5 * (1.0 + std::cos(std::numbers::pi * d / half_width));
}

struct Bump {
  double amplitude, center, half_width;
};

struct Profile {
  double v_free;
  std::vector<Bump> bumps;
  std::vector<double> day_factor;
};

Profile make_profile(const SyntheticConfig &cfg, int node, bool isolated) {
  CounterRng rng(cfg.seed, kProfileStream + static_cast<std::uint64_t>(node));
  Profile p;
  p.v_free = std::min(rng.uniform(55.0, 65.0), cfg.v_max - 2.0);
  if (isolated) {
    // Independent pattern: a single midday dip at a node-specific hour.
    p.bumps.push_back({rng.uniform(20.0, 35.0), rng.uniform(10.0, 15.0),
                       rng.uniform(2.0, 4.0)});
  } else {
    p.bumps.push_back({rng.uniform(15.0, 30.0), 8.0 + rng.uniform(-0.5, 0.5),
                       rng.uniform(1.5, 2.5)});
    p.bumps.push_back({rng.uniform(10.0, 25.0), 17.5 + rng.uniform(-0.5, 0.5),
                       rng.uniform(1.5, 2.5)});
  }
  for (int d = 0; d < cfg.n_days; ++d)
    p.day_factor.push_back(rng.uniform(0.85, 1.15));
  return p;
}

} // namespace

SyntheticData generate_synthetic(const SyntheticConfig &cfg) {
  cfg.validate();
  const int N = cfg.n_nodes;
  const std::size_t T = static_cast<std::size_t>(cfg.steps_per_day) * cfg.n_days;
  SyntheticData out;

  CounterRng layout(cfg.seed, kLayoutStream);
  RoadNetwork &net = out.network;
  net.num_nodes = N;
  net.adjacency.assign(static_cast<std::size_t>(N) * N, 0.0f);
  for (int n = 0; n < N; ++n) {
    net.x.push_back(layout.uniform());
    net.y.push_back(layout.uniform());
  }
  std::vector<int> order(N);
  for (int n = 0; n < N; ++n)
    order[n] = n;
  for (int i = N - 1; i > 0; --i)
    std::swap(order[i], order[layout.below(static_cast<std::uint64_t>(i) + 1)]);

  ScenarioTags &tags = out.tags;
  tags.node_class.assign(N, NodeClass::Connected);
  tags.event_node.assign(N, 0);
  tags.event_mask.assign(T * N, 0);
  for (int i = 0; i < cfg.n_isolated; ++i)
    tags.node_class[order[i]] = NodeClass::Isolated;
  for (int i = 0; i < cfg.n_event_nodes; ++i)
    tags.event_node[order[cfg.n_isolated + i]] = 1;

  auto connected = [&](int n) { return tags.node_class[n] == NodeClass::Connected; };
  auto dist = [&](int a, int b) {
    return std::hypot(net.x[a] - net.x[b], net.y[a] - net.y[b]);
  };
  auto link = [&](int a, int b) {
    net.adjacency[static_cast<std::size_t>(a) * N + b] = 1.0f;
    net.adjacency[static_cast<std::size_t>(b) * N + a] = 1.0f;
  };
  for (int a = 0; a < N; ++a)
    for (int b = a + 1; b < N; ++b)
      if (connected(a) && connected(b) && dist(a, b) < cfg.radius)
        link(a, b);
  for (int a = 0; a < N; ++a) {
    if (!connected(a) || net.degree(a) > 0)
      continue;
    int best = -1;
    for (int b = 0; b < N; ++b)
      if (b != a && connected(b) && (best < 0 || dist(a, b) < dist(a, best)))
        best = b;
    if (best >= 0)
      link(a, best);
  }

  std::vector<Profile> profiles;
  for (int n = 0; n < N; ++n)
    profiles.push_back(make_profile(cfg, n, !connected(n)));

  // Events: Poisson count per event node, uniform start, 1-3 hour span.
  std::vector<double> drop(T * N, 0.0);
  for (int n = 0; n < N; ++n) {
    if (!tags.event_node[n])
      continue;
    CounterRng rng(cfg.seed, kEventStream + static_cast<std::uint64_t>(n));
    const int count = rng.poisson(cfg.event_rate * cfg.n_days);
    const int min_len = std::max(1, cfg.steps_per_day / 24);
    const int max_len = std::max(min_len, cfg.steps_per_day / 8);
    for (int e = 0; e < count; ++e) {
      const std::size_t start = rng.below(T);
      const int len = min_len + static_cast<int>(rng.below(
                                    static_cast<std::uint64_t>(max_len - min_len + 1)));
      const double depth = rng.uniform(0.4, 0.7);
      for (std::size_t t = start; t < std::min(T, start + len); ++t) {
        drop[t * N + n] = std::max(drop[t * N + n], depth);
        tags.event_mask[t * N + n] = 1;
      }
    }
  }

  GraphSignalSeries &s = out.series;
  s.interval_minutes = 1440 / cfg.steps_per_day;
  for (int n = 0; n < N; ++n) {
    char id[16];
    std::snprintf(id, sizeof id, "n%03d", n);
    s.node_ids.emplace_back(id);
  }
  s.values.resize(T * N);
  std::vector<double> state(N), prev(N);
  std::vector<CounterRng> noise;
  for (int n = 0; n < N; ++n)
    noise.emplace_back(cfg.seed, kNoiseStream + static_cast<std::uint64_t>(n));
  for (std::size_t t = 0; t < T; ++t) {
    s.timestamps.push_back(cfg.start_epoch +
                           static_cast<std::int64_t>(t) * s.interval_minutes * 60);
    const int day = static_cast<int>(t / cfg.steps_per_day);
    const double hour = 24.0 * static_cast<double>(t % cfg.steps_per_day) /
                        cfg.steps_per_day;
    for (int n = 0; n < N; ++n) {
      const Profile &p = profiles[n];
      double base = p.v_free;
      for (const Bump &b : p.bumps)
        base -= b.amplitude * p.day_factor[day] *
                raised_cosine(hour, b.center, b.half_width);
      base = std::clamp(base, 0.0, cfg.v_max);
      double v = base;
      if (connected(n) && net.degree(n) > 0) {
        double nb = 0.0;
        int k = 0;
        for (int j = 0; j < N; ++j)
          if (net.adjacency[static_cast<std::size_t>(n) * N + j] != 0.0f) {
            nb += t == 0 ? base : prev[j];
            ++k;
          }
        v = cfg.self_weight * base + (1.0 - cfg.self_weight) * nb / k;
      }
      v *= 1.0 - drop[t * N + n];
      state[n] = v;
    }
    for (int n = 0; n < N; ++n) {
      const double obs = state[n] + cfg.noise_std * noise[n].normal();
      s.values[t * N + n] = static_cast<float>(std::clamp(obs, 1.0, cfg.v_max));
    }
    prev = state;
  }
  return out;
}

} // namespace testam
