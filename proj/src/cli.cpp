#include "rdm/cli.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <thread>

#include "rdm/errors.hpp"
#include "rdm/evalkit.hpp"
#include "rdm/model.hpp"
#include "rdm/optimizer.hpp"
#include "rdm/pose.hpp"

namespace rdm::cli {

namespace fs = std::filesystem;

using geometry::PointCloud;
using geometry::RigidTransform;

int exit_code_for_current_exception() {
  try {
    throw;
  } catch (const IoError& e) {
    std::cerr << "io error: " << e.what() << "\n";
    return kIoError;
  } catch (const ParseError& e) {
    std::cerr << "parse error: " << e.what() << "\n";
    return kParseError;
  } catch (const InsufficientDataError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return kDataError;
  } catch (const DegenerateConfigurationError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return kDataError;
  } catch (const UndefinedMetricError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return kDataError;
  } catch (const GenerationError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return kDataError;
  } catch (const InvalidSupervisionError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return kDataError;
  } catch (const TrainingFailure& e) {
    std::cerr << "numeric error: " << e.what() << "\n";
    return kNumericError;
  } catch (const EvaluationFailure& e) {
    std::cerr << "numeric error: " << e.what() << "\n";
    return kNumericError;
  } catch (const std::invalid_argument& e) {
    std::cerr << "argument error: " << e.what() << "\n";
    return kArgumentError;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kNumericError;
  }
}

Config resolve_config(const CommonOptions& common) {
  Config cfg = common.config_path ? parse_config_file(*common.config_path) : Config{};
  cfg = apply_overrides(std::move(cfg), common.overrides);
  cfg.validate();
  return cfg;
}

namespace {

model::ModelWeights load_or_init(const std::optional<std::string>& weights_path,
                                 const Config& cfg) {
  if (weights_path) {
    return model::from_param_set(numerics::ParamSet::load(*weights_path));
  }
  return model::init_model(cfg);
}

datakit::SynthConfig synth_config(const Config& cfg) {
  datakit::SynthConfig sc;
  sc.num_objects = cfg.synth_objects;
  sc.extent = cfg.synth_extent;
  sc.overlap_target = cfg.synth_overlap;
  sc.noise_sigma = cfg.synth_noise;
  return sc;
}

evalkit::PairResult evaluate_registration(const model::RegistrationOutput& reg,
                                          const RigidTransform& gt, const Config& cfg) {
  evalkit::PairResult pr;
  pr.inlier_ratio =
      evalkit::inlier_ratio(reg.dense, reg.fine_a, reg.fine_b, gt, cfg.inlier_threshold);
  auto [rre, rte] = evalkit::relative_errors(reg.estimate.transform, gt);
  pr.rre_deg = rre;
  pr.rte_m = rte;
  pr.registered =
      rre <= cfg.rr_rot_threshold_deg && rte <= cfg.rr_trans_threshold_m;
  return pr;
}

int worker_count(size_t jobs) {
  unsigned n = std::thread::hardware_concurrency();
  if (n == 0) n = 1;
  if (const char* env = std::getenv("RDM_THREADS")) {
    const int cap = std::atoi(env);
    if (cap > 0) n = std::min<unsigned>(n, static_cast<unsigned>(cap));
  }
  return static_cast<int>(std::min<size_t>(n, jobs == 0 ? 1 : jobs));
}

}  // namespace

int run_register(const RegisterOptions& opts) {
  const Config cfg = resolve_config(opts.common);
  if (!fs::exists(opts.source_path)) throw IoError("missing file: " + opts.source_path);
  if (!fs::exists(opts.target_path)) throw IoError("missing file: " + opts.target_path);
  PointCloud source = datakit::read_scan_bin(opts.source_path);
  PointCloud target = datakit::read_scan_bin(opts.target_path);
  const model::ModelWeights weights = load_or_init(opts.weights_path, cfg);

  model::RegistrationOutput reg = model::register_pair(source, target, weights, cfg);

  fs::create_directories(opts.out_dir);
  {
    std::ofstream os(fs::path(opts.out_dir) / "pose.txt");
    if (!os) throw IoError("cannot write pose file in " + opts.out_dir);
    pose::write_pose_line(os, reg.estimate.transform);
  }
  {
    std::ofstream os(fs::path(opts.out_dir) / "correspondences.txt");
    if (!os) throw IoError("cannot write correspondence dump in " + opts.out_dir);
    matching::write_correspondences(os, reg.coarse, reg.dense);
  }
  if (opts.gt_path) {
    auto gts = datakit::read_pose_file(*opts.gt_path);
    if (gts.empty()) throw ParseError("gt pose file is empty: " + *opts.gt_path);
    const evalkit::PairResult pr = evaluate_registration(reg, gts.front(), cfg);
    std::ofstream os(fs::path(opts.out_dir) / "metrics.csv");
    evalkit::write_pair_report(os, {pr});
  }
  std::cout << "matches=" << reg.dense.matches.size()
            << " inliers=" << reg.estimate.inlier_count
            << " converged=" << (reg.estimate.converged ? 1 : 0) << "\n";
  return kOk;
}

int run_train_toy(const TrainOptions& opts) {
  const Config cfg = resolve_config(opts.common);
  if (opts.scenes < 1 || opts.epochs < 1) {
    throw std::invalid_argument("train-toy: scenes and epochs must be >= 1");
  }
  const datakit::SynthConfig sc = synth_config(cfg);

  // Scene geometry is fixed per index; augmentation reshuffles per step.
  std::vector<datakit::RegistrationPair> pairs;
  pairs.reserve(opts.scenes);
  for (int i = 0; i < opts.scenes; ++i) {
    pairs.push_back(datakit::synth_scene_pair(cfg.seed + static_cast<uint64_t>(i), sc));
  }

  numerics::ParamSet params = model::to_param_set(model::init_model(cfg));
  numerics::ParamSet last_good = params;
  numerics::Adam opt;
  std::mt19937_64 subsample_rng(cfg.seed ^ 0x5eed5eedULL);

  std::ofstream log;
  if (!opts.log_path.empty()) {
    log.open(opts.log_path);
    if (!log) throw IoError("cannot open training log: " + opts.log_path);
    log.precision(17);
    log << "step,L_s1,L_s2,L_c,L_f,total,lr\n";
  }

  long step = 0;
  for (int epoch = 0; epoch < opts.epochs; ++epoch) {
    const double lr =
        cfg.lr * std::pow(cfg.lr_decay_factor, epoch / std::max(1, cfg.lr_decay_epochs));
    for (int s = 0; s < opts.scenes; ++s) {
      const uint64_t aug_seed =
          cfg.seed + 7919ull * static_cast<uint64_t>(epoch) + static_cast<uint64_t>(s) + 1;
      datakit::RegistrationPair pair = datakit::augment(pairs[s], aug_seed);

      model::ModelWeights w = model::from_param_set(params);
      model::SceneLoss sl = model::build_scene_loss(pair, w, cfg, &subsample_rng);
      if (!std::isfinite(sl.breakdown.total_value)) {
        last_good.save(opts.out_weights);
        throw TrainingFailure("non-finite loss at step " + std::to_string(step) +
                              "; last good checkpoint retained");
      }
      numerics::backward(sl.breakdown.total);
      std::map<std::string, numerics::Matrix> grads;
      for (size_t i = 0; i < sl.leaves.size(); ++i) {
        if (sl.leaves[i]->grad_set) grads[sl.names[i]] = sl.leaves[i]->grad;
      }
      opt.step(params, grads, lr, cfg.grad_clip);
      last_good = params;

      if (log) {
        log << step << "," << sl.breakdown.ls1_value << "," << sl.breakdown.ls2_value
            << "," << sl.breakdown.lc_value << "," << sl.breakdown.lf_value << ","
            << sl.breakdown.total_value << "," << lr << "\n";
      }
      ++step;
    }
  }
  params.save(opts.out_weights);
  return kOk;
}

namespace {

struct EvalJob {
  PointCloud source;
  PointCloud target;
  RigidTransform gt;
};

std::vector<EvalJob> jobs_from_manifest(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw IoError("cannot open manifest: " + path);
  std::vector<EvalJob> jobs;
  std::string line;
  int line_no = 0;
  while (std::getline(is, line)) {
    ++line_no;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    if (line.find_first_not_of(" \t\r\n") == std::string::npos) continue;
    std::istringstream ls(line);
    std::string src, tgt;
    double v[12];
    if (!(ls >> src >> tgt)) throw ParseError("manifest line needs two paths", line_no);
    for (int i = 0; i < 12; ++i) {
      if (!(ls >> v[i])) {
        throw ParseError("manifest line needs 12 transform numbers", line_no);
      }
    }
    EvalJob job;
    job.source = datakit::read_scan_bin(src);
    job.target = datakit::read_scan_bin(tgt);
    job.gt.rotation << v[0], v[1], v[2], v[4], v[5], v[6], v[8], v[9], v[10];
    job.gt.translation << v[3], v[7], v[11];
    jobs.push_back(std::move(job));
  }
  return jobs;
}

}  // namespace

int run_eval(const EvalOptions& opts) {
  const Config cfg = resolve_config(opts.common);
  std::vector<EvalJob> jobs;
  if (opts.manifest_path) {
    jobs = jobs_from_manifest(*opts.manifest_path);
  } else {
    const datakit::SynthConfig sc = synth_config(cfg);
    for (int i = 0; i < opts.synthetic_pairs; ++i) {
      datakit::RegistrationPair pair = datakit::synth_scene_pair(
          cfg.seed + opts.synthetic_seed_offset + static_cast<uint64_t>(i), sc);
      jobs.push_back({std::move(pair.source.cloud), std::move(pair.target.cloud),
                      pair.gt_relative});
    }
  }
  if (jobs.empty()) throw UndefinedMetricError("eval: no pairs to evaluate");

  const model::ModelWeights weights = load_or_init(opts.weights_path, cfg);

  std::vector<evalkit::PairResult> results(jobs.size());
  std::vector<char> ok(jobs.size(), 0);
  std::atomic<size_t> next{0};
  std::atomic<int> failures{0};
  auto work = [&]() {
    for (;;) {
      const size_t i = next.fetch_add(1);
      if (i >= jobs.size()) break;
      try {
        model::RegistrationOutput reg =
            model::register_pair(jobs[i].source, jobs[i].target, weights, cfg);
        results[i] = evaluate_registration(reg, jobs[i].gt, cfg);
        ok[i] = 1;
      } catch (const std::exception& e) {
        failures.fetch_add(1);
        std::cerr << "pair " << i << " failed: " << e.what() << "\n";
      }
    }
  };
  const int workers = worker_count(jobs.size());
  std::vector<std::thread> pool;
  for (int t = 0; t < workers - 1; ++t) pool.emplace_back(work);
  work();
  for (auto& t : pool) t.join();

  std::vector<evalkit::PairResult> completed;
  for (size_t i = 0; i < jobs.size(); ++i) {
    if (ok[i]) completed.push_back(results[i]);
  }

  fs::create_directories(opts.report_dir);
  {
    std::ofstream os(fs::path(opts.report_dir) / "pairs.csv");
    evalkit::write_pair_report(os, completed);
  }
  {
    std::ofstream os(fs::path(opts.report_dir) / "summary.txt");
    evalkit::write_summary(os, completed, cfg.fmr_threshold, cfg.rr_rot_threshold_deg,
                           cfg.rr_trans_threshold_m, failures.load());
    evalkit::write_summary(std::cout, completed, cfg.fmr_threshold,
                           cfg.rr_rot_threshold_deg, cfg.rr_trans_threshold_m,
                           failures.load());
  }
  if (!completed.empty()) {
    std::ofstream os(fs::path(opts.report_dir) / "recall_sweep.csv");
    evalkit::write_threshold_sweep(os, completed,
                                   {0.5, 1, 1.5, 2, 2.5, 3, 4, 5, 7.5, 10},
                                   {0.1, 0.25, 0.5, 0.75, 1, 1.5, 2, 3, 4, 5},
                                   cfg.rr_rot_threshold_deg, cfg.rr_trans_threshold_m);
  }
  return kOk;
}

int run_bench_attn(const BenchOptions& opts) {
  const Config cfg = resolve_config(opts.common);
  for (int n : opts.nodes) {
    if (n < 1) throw std::invalid_argument("bench: node counts must be >= 1");
  }
  if (opts.dim < 2 || opts.dim % 2 != 0) {
    throw std::invalid_argument("bench: dim must be even and >= 2");
  }
  std::mt19937_64 rng(cfg.seed);
  roformer::AttentionWeights w =
      roformer::init_attention_weights(opts.dim, cfg.layers, rng, opts.ffn_multiple * opts.dim);
  roformer::BaselineWeights baselines =
      roformer::init_baseline_weights(opts.dim, 64, 64, 1.0, rng);

  std::ostringstream csv;
  csv << "kind,nodes,median_ms,peak_bytes\n";
  for (const std::string& kind_name : opts.kinds) {
    const roformer::EmbeddingKind kind = roformer::embedding_kind_from_string(kind_name);
    for (int n : opts.nodes) {
      std::mt19937_64 data_rng(cfg.seed + static_cast<uint64_t>(n));
      numerics::Matrix fa = numerics::random_uniform(n, opts.dim, -1.0, 1.0, data_rng);
      numerics::Matrix fb = numerics::random_uniform(n, opts.dim, -1.0, 1.0, data_rng);
      std::vector<geometry::Point3> pa(n), pb(n);
      std::uniform_real_distribution<double> coord(-30.0, 30.0);
      for (int i = 0; i < n; ++i) {
        pa[i] = {coord(data_rng), coord(data_rng), coord(data_rng) * 0.1};
        pb[i] = {coord(data_rng), coord(data_rng), coord(data_rng) * 0.1};
      }
      std::vector<double> times;
      size_t peak = 0;
      for (int rep = 0; rep < std::max(1, opts.repeats); ++rep) {
        roformer::AllocTracker::reset();
        const auto t0 = std::chrono::steady_clock::now();
        auto out = roformer::stack_infer(w, fa, pa, fb, pb, kind, &baselines);
        const auto t1 = std::chrono::steady_clock::now();
        times.push_back(std::chrono::duration<double, std::milli>(t1 - t0).count());
        peak = std::max(peak, roformer::AllocTracker::peak_bytes());
        if (!numerics::all_finite(out.first)) {
          throw EvaluationFailure("bench: non-finite attention output");
        }
      }
      std::sort(times.begin(), times.end());
      const double median = times[times.size() / 2];
      csv << kind_name << "," << n << "," << median << "," << peak << "\n";
    }
  }
  if (opts.out_csv.empty()) {
    std::cout << csv.str();
  } else {
    std::ofstream os(opts.out_csv);
    if (!os) throw IoError("cannot write bench csv: " + opts.out_csv);
    os << csv.str();
    std::cout << csv.str();
  }
  return kOk;
}

int run_synth(const SynthOptions& opts) {
  const Config cfg = resolve_config(opts.common);
  if (opts.count < 1) throw std::invalid_argument("synth: count must be >= 1");
  const datakit::SynthConfig sc = synth_config(cfg);
  fs::create_directories(opts.out_dir);
  std::ofstream manifest(fs::path(opts.out_dir) / "manifest.txt");
  if (!manifest) throw IoError("cannot write manifest in " + opts.out_dir);
  manifest.precision(17);
  for (int i = 0; i < opts.count; ++i) {
    const uint64_t seed = cfg.seed + opts.seed_offset + static_cast<uint64_t>(i);
    datakit::RegistrationPair pair = datakit::synth_scene_pair(seed, sc);
    const std::string src = (fs::path(opts.out_dir) /
                             ("pair" + std::to_string(i) + "_source.bin")).string();
    const std::string tgt = (fs::path(opts.out_dir) /
                             ("pair" + std::to_string(i) + "_target.bin")).string();
    datakit::write_scan_bin(src, pair.source.cloud);
    datakit::write_scan_bin(tgt, pair.target.cloud);
    manifest << src << " " << tgt;
    const auto& t = pair.gt_relative;
    for (int r = 0; r < 3; ++r) {
      for (int c = 0; c < 3; ++c) manifest << " " << t.rotation(r, c);
      manifest << " " << t.translation(r);
    }
    manifest << "\n";
  }
  return kOk;
}

}  // namespace rdm::cli
