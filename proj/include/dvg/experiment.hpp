#pragma once

#include <algorithm>
#include <atomic>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "dvg/training.hpp"

namespace dvg {

// --------------------------------------------------------------------------
// Experiment manifests: named groups of (config, seed list)

struct ManifestRun {
  std::string name;         // output subdirectory
  std::string config_path;  // as written in the manifest
  TrainConfig config;       // parsed, seed overridden per run
  std::vector<unsigned long long> seeds;
};

struct ExperimentManifest {
  std::vector<ManifestRun> runs;

  /// Text format: one `[run]` section per experiment arm, each with
  /// `config = <path>` (resolved relative to the manifest file),
  /// `seeds = 0,1,2` and an optional `name = <dir>` (defaults to the config
  /// file's stem). Seeds must be distinct within a run.
  static ExperimentManifest from_file(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw ValidationError("cannot open manifest: " + path);
    namespace fs = std::filesystem;
    const fs::path base = fs::path(path).parent_path();

    ExperimentManifest m;
    ManifestRun cur;
    bool open = false;
    auto flush = [&] {
      if (!open) return;
      if (cur.config_path.empty())
        throw ValidationError("manifest: [run] section without config=");
      if (cur.seeds.empty())
        throw ValidationError("manifest: [run] section without seeds=");
      std::set<unsigned long long> uniq(cur.seeds.begin(), cur.seeds.end());
      if (uniq.size() != cur.seeds.size())
        throw ValidationError("manifest: duplicate seeds in run '" + cur.name + "'");
      fs::path cfg = cur.config_path;
      if (cfg.is_relative()) cfg = base / cfg;
      cur.config = TrainConfig::from_file(cfg.string());
      if (cur.name.empty()) cur.name = fs::path(cur.config_path).stem().string();
      m.runs.push_back(cur);
      cur = ManifestRun{};
    };

    std::string line;
    int lineno = 0;
    while (std::getline(f, line)) {
      ++lineno;
      const auto hash = line.find('#');
      if (hash != std::string::npos) line = line.substr(0, hash);
      line = detail::trim(line);
      if (line.empty()) continue;
      if (line == "[run]") {
        flush();
        open = true;
        continue;
      }
      const auto eq = line.find('=');
      if (!open || eq == std::string::npos)
        throw ValidationError("manifest line " + std::to_string(lineno) +
                              ": expected [run] or key=value, got '" + line + "'");
      const std::string key = detail::trim(line.substr(0, eq));
      const std::string val = detail::trim(line.substr(eq + 1));
      if (key == "config") {
        cur.config_path = val;
      } else if (key == "name") {
        cur.name = val;
      } else if (key == "seeds") {
        std::istringstream ss(val);
        std::string tok;
        while (std::getline(ss, tok, ',')) {
          tok = detail::trim(tok);
          if (tok.empty()) continue;
          cur.seeds.push_back(
              static_cast<unsigned long long>(detail::parse_int("seeds", tok)));
        }
      } else {
        throw ValidationError("manifest: unknown key '" + key +
                              "' (expected config, name, seeds)");
      }
    }
    flush();
    if (m.runs.empty()) throw ValidationError("manifest: no [run] sections");
    std::set<std::string> names;
    for (const ManifestRun& r : m.runs)
      if (!names.insert(r.name).second)
        throw ValidationError("manifest: duplicate run name '" + r.name + "'");
    return m;
  }
};

struct RunOutcome {
  std::string name;
  unsigned long long seed = 0;
  bool ok = false;
  std::string error;
  long long steps = 0;
  double final_return = 0.0;
};

/// Execute every (run, seed) pair into out_dir/<name>/seed_<seed>/.
/// Failures are isolated per run and recorded in the outcome list and the
/// index.csv written at the end. jobs > 1 runs seeds as independent workers;
/// results are identical either way (every run has fully disjoint state).
inline std::vector<RunOutcome> run_experiment(const ExperimentManifest& m,
                                              const std::string& out_dir,
                                              int jobs = 1) {
  namespace fs = std::filesystem;
  struct Item {
    const ManifestRun* run;
    unsigned long long seed;
  };
  std::vector<Item> items;
  for (const ManifestRun& r : m.runs)
    for (unsigned long long s : r.seeds) items.push_back({&r, s});

  std::vector<RunOutcome> outcomes(items.size());
  auto work = [&](std::size_t i) {
    const Item& it = items[i];
    RunOutcome& oc = outcomes[i];
    oc.name = it.run->name;
    oc.seed = it.seed;
    try {
      TrainConfig cfg = it.run->config;
      cfg.seed = it.seed;
      const std::string dir =
          (fs::path(out_dir) / it.run->name / ("seed_" + std::to_string(it.seed)))
              .string();
      RunLog log = train_run(cfg, dir);
      oc.ok = true;
      if (!log.episodes.empty()) {
        oc.steps = log.episodes.back().steps;
        oc.final_return = log.episodes.back().ret;
      }
    } catch (const std::exception& e) {
      oc.ok = false;
      oc.error = e.what();
    }
  };

  if (jobs <= 1) {
    for (std::size_t i = 0; i < items.size(); ++i) work(i);
  } else {
    std::atomic<std::size_t> next{0};
    auto worker = [&] {
      for (std::size_t i = next.fetch_add(1); i < items.size();
           i = next.fetch_add(1))
        work(i);
    };
    std::vector<std::thread> pool;
    const int n = std::min<int>(jobs, static_cast<int>(items.size()));
    pool.reserve(n);
    for (int t = 0; t < n; ++t) pool.emplace_back(worker);
    for (std::thread& t : pool) t.join();
  }

  fs::create_directories(out_dir);
  std::ofstream idx(fs::path(out_dir) / "index.csv");
  idx << "name,seed,status,steps,final_return\n";
  for (const RunOutcome& oc : outcomes)
    idx << oc.name << "," << oc.seed << "," << (oc.ok ? "ok" : "failed") << ","
        << oc.steps << "," << Mlp::format_double(oc.final_return) << "\n";
  return outcomes;
}

// --------------------------------------------------------------------------
// Aggregation: median and central 75% band across seeds

struct SeedCurve {
  std::vector<long long> steps;
  std::vector<double> returns;
};

/// Parse the steps/return columns out of an episodes.csv.
inline SeedCurve read_episode_curve(const std::string& csv_path) {
  std::ifstream f(csv_path);
  if (!f) throw ValidationError("cannot open " + csv_path);
  std::string line;
  if (!std::getline(f, line)) throw ValidationError("empty csv: " + csv_path);
  std::vector<std::string> header;
  {
    std::istringstream ss(line);
    std::string tok;
    while (std::getline(ss, tok, ',')) header.push_back(tok);
  }
  int step_col = -1, ret_col = -1;
  for (std::size_t i = 0; i < header.size(); ++i) {
    if (header[i] == "steps") step_col = static_cast<int>(i);
    if (header[i] == "return") ret_col = static_cast<int>(i);
  }
  if (step_col < 0 || ret_col < 0)
    throw ValidationError(csv_path + ": missing steps/return columns");
  SeedCurve out;
  while (std::getline(f, line)) {
    if (detail::trim(line).empty()) continue;
    std::istringstream ss(line);
    std::string tok;
    std::vector<std::string> cells;
    while (std::getline(ss, tok, ',')) cells.push_back(tok);
    if (static_cast<int>(cells.size()) <= std::max(step_col, ret_col))
      throw ValidationError(csv_path + ": short row");
    out.steps.push_back(std::stoll(cells[step_col]));
    out.returns.push_back(Mlp::parse_double(cells[ret_col]));
  }
  return out;
}

/// Linear-interpolation quantile on sorted values (the common "type 7" rule:
/// h = (n-1)q, interpolate between floor(h) and floor(h)+1).
inline double quantile_sorted(const std::vector<double>& sorted, double q) {
  if (sorted.empty()) throw ValidationError("quantile of empty set");
  const double h = (static_cast<double>(sorted.size()) - 1.0) * q;
  const auto lo = static_cast<std::size_t>(h);
  if (lo + 1 >= sorted.size()) return sorted.back();
  const double frac = h - static_cast<double>(lo);
  return sorted[lo] + frac * (sorted[lo + 1] - sorted[lo]);
}

struct AggregateCurve {
  std::vector<long long> steps;
  std::vector<double> median, q_lo, q_hi;  // 50th, 12.5th, 87.5th
};

/// Align per-seed curves on the union step grid by carrying the last
/// observation forward (a seed's first value also fills any earlier grid
/// points), then take the median and the central 75% band pointwise. The
/// result does not depend on the order of the input curves.
inline AggregateCurve aggregate_curves(const std::vector<SeedCurve>& curves) {
  if (curves.empty()) throw ValidationError("aggregate: no curves");
  std::set<long long> grid;
  for (const SeedCurve& c : curves) {
    if (c.steps.empty()) throw ValidationError("aggregate: empty curve");
    grid.insert(c.steps.begin(), c.steps.end());
  }
  AggregateCurve out;
  out.steps.assign(grid.begin(), grid.end());
  out.median.reserve(out.steps.size());
  out.q_lo.reserve(out.steps.size());
  out.q_hi.reserve(out.steps.size());
  std::vector<std::size_t> pos(curves.size(), 0);
  for (long long g : out.steps) {
    std::vector<double> vals;
    vals.reserve(curves.size());
    for (std::size_t i = 0; i < curves.size(); ++i) {
      const SeedCurve& c = curves[i];
      while (pos[i] + 1 < c.steps.size() && c.steps[pos[i] + 1] <= g) ++pos[i];
      // pos[i] is the last index with steps <= g (or 0 when g precedes the
      // first observation, which backfills with the first value).
      vals.push_back(c.returns[pos[i]]);
    }
    std::sort(vals.begin(), vals.end());
    out.median.push_back(quantile_sorted(vals, 0.5));
    out.q_lo.push_back(quantile_sorted(vals, 0.125));
    out.q_hi.push_back(quantile_sorted(vals, 0.875));
  }
  return out;
}

inline std::string aggregate_csv(const AggregateCurve& c) {
  std::ostringstream os;
  os << "steps,median,q125,q875\n";
  for (std::size_t i = 0; i < c.steps.size(); ++i)
    os << c.steps[i] << "," << Mlp::format_double(c.median[i]) << ","
       << Mlp::format_double(c.q_lo[i]) << "," << Mlp::format_double(c.q_hi[i])
       << "\n";
  return os.str();
}

/// Aggregate every seed_*/episodes.csv directly under `dir`.
inline AggregateCurve aggregate_dir(const std::string& dir) {
  namespace fs = std::filesystem;
  std::vector<std::string> files;
  for (const auto& entry : fs::directory_iterator(dir)) {
    if (!entry.is_directory()) continue;
    const std::string stem = entry.path().filename().string();
    if (stem.rfind("seed_", 0) != 0) continue;
    const fs::path csv = entry.path() / "episodes.csv";
    if (fs::exists(csv)) files.push_back(csv.string());
  }
  std::sort(files.begin(), files.end());
  if (files.empty())
    throw ValidationError("aggregate: no seed_*/episodes.csv under " + dir);
  std::vector<SeedCurve> curves;
  curves.reserve(files.size());
  for (const std::string& f : files) curves.push_back(read_episode_curve(f));
  return aggregate_curves(curves);
}

// --------------------------------------------------------------------------
// State-visitation histograms

struct VisitationReport {
  std::vector<int> bins_per_dim;
  Vec lo, hi;
  std::vector<long long> counts;  // flattened, first dim slowest
  long long total = 0;
  std::string policy_id;

  long long& at(const std::vector<int>& idx) { return counts[flat(idx)]; }

  std::size_t flat(const std::vector<int>& idx) const {
    std::size_t f = 0;
    for (std::size_t i = 0; i < idx.size(); ++i)
      f = f * static_cast<std::size_t>(bins_per_dim[i]) +
          static_cast<std::size_t>(idx[i]);
    return f;
  }

  /// Share of all visits inside the most-visited 10% of bins.
  double top_decile_share() const {
    if (total == 0) return 0.0;
    std::vector<long long> sorted = counts;
    std::sort(sorted.begin(), sorted.end(), std::greater<>());
    const auto top = std::max<std::size_t>(1, sorted.size() / 10);
    long long mass = 0;
    for (std::size_t i = 0; i < top; ++i) mass += sorted[i];
    return static_cast<double>(mass) / static_cast<double>(total);
  }

  /// CSV rows: one per nonzero bin — per-dim bin index, bin centers, count.
  std::string to_csv() const {
    const int D = static_cast<int>(bins_per_dim.size());
    std::ostringstream os;
    for (int i = 0; i < D; ++i) os << "bin" << i << ",";
    for (int i = 0; i < D; ++i) os << "center" << i << ",";
    os << "count\n";
    std::vector<int> idx(D, 0);
    for (std::size_t f = 0; f < counts.size(); ++f) {
      if (counts[f] != 0) {
        for (int i = 0; i < D; ++i) os << idx[i] << ",";
        for (int i = 0; i < D; ++i) {
          const double w = (hi[i] - lo[i]) / bins_per_dim[i];
          os << Mlp::format_double(lo[i] + (idx[i] + 0.5) * w) << ",";
        }
        os << counts[f] << "\n";
      }
      for (int i = D - 1; i >= 0; --i) {
        if (++idx[i] < bins_per_dim[i]) break;
        idx[i] = 0;
      }
    }
    return os.str();
  }
};

/// Count visited states over noise-free rollouts on a uniform grid across
/// the environment's reporting box. States visited after each step are
/// counted (the sampled start state itself is not); out-of-box states clamp
/// to the edge bins, so counts always sum to episodes * steps.
template <class Policy>
VisitationReport visitation_report(const Env& env, const Policy& pi,
                                   int episodes, int bins, Rng& rng,
                                   int steps_per_episode = 0) {
  if (bins < 1) throw ValidationError("visitation: bins must be >= 1");
  const EnvSpec& spec = env.spec();
  const int D = spec.state_dim;
  VisitationReport rep;
  rep.bins_per_dim.assign(D, bins);
  rep.lo = spec.obs_lo;
  rep.hi = spec.obs_hi;
  std::size_t cells = 1;
  for (int i = 0; i < D; ++i) cells *= static_cast<std::size_t>(bins);
  rep.counts.assign(cells, 0);
  const int T = steps_per_episode > 0 ? steps_per_episode : spec.horizon;
  std::vector<int> idx(D);
  for (int e = 0; e < episodes; ++e) {
    Vec s = env.sample_initial(rng);
    for (int t = 0; t < T; ++t) {
      s = env.step(s, pi.act(s)).next;
      for (int i = 0; i < D; ++i) {
        const double w = (rep.hi[i] - rep.lo[i]) / bins;
        int b = static_cast<int>(std::floor((s[i] - rep.lo[i]) / w));
        idx[i] = std::clamp(b, 0, bins - 1);
      }
      ++rep.counts[rep.flat(idx)];
      ++rep.total;
    }
  }
  return rep;
}

}  // namespace dvg
