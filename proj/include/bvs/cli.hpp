#pragma once

// Command-line front end. `run` returns the process exit code: 0 success,
// 2 usage error, 1 runtime error.

#include <CLI11.hpp>

#include <cstdio>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "bvs/errors.hpp"
#include "bvs/io.hpp"
#include "bvs/nn/checkpoint.hpp"
#include "bvs/pipeline.hpp"
#include "bvs/run_config.hpp"
#include "bvs/synthworld.hpp"
#include "bvs/training.hpp"

namespace bvs::cli {

struct UsageError : Error {
  using Error::Error;
};

namespace detail {

inline RunConfig load_config(const std::string& path) { return path.empty() ? RunConfig{} : RunConfig::load(path); }

inline std::vector<std::uint32_t> parse_ids(const std::string& text) {
  std::vector<std::uint32_t> out;
  std::string item;
  std::stringstream ss(text);
  while (std::getline(ss, item, ',')) {
    item = kv::trim(item);
    if (item.empty()) continue;
    try {
      std::size_t used = 0;
      const auto v = std::stoull(item, &used);
      if (used != item.size()) throw std::invalid_argument("trailing");
      out.push_back(static_cast<std::uint32_t>(v));
    } catch (const std::exception&) {
      throw UsageError("expected comma-separated word ids, got `" + item + "`");
    }
  }
  return out;
}

// Short form for console output; integral values keep a ".0".
inline std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.6g", v);
  std::string s = buf;
  if (s.find_first_of(".eni") == std::string::npos) s += ".0";
  return s;
}

}  // namespace detail

struct Options {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::string out;
  std::size_t workers = 1;

  // gen-data
  std::size_t count = 0;
  std::uint64_t first_index = 0;

  // train
  std::string stage;
  std::string data;
  std::optional<std::size_t> steps;
  std::string resume;
  std::string log_path;
  std::string heldout;

  // generate
  std::string v2as_ckpt, vs2a_ckpt;
  std::optional<double> cfg_scale;
  std::string vs2a_steps;
  std::optional<double> vs2a_cfg_scale;
  std::optional<std::string> transcript;
  std::size_t index = 0;
  std::string speech_from;

  // eval
  std::string generated;
  double fad_shrinkage = 0.0;
};

inline int cmd_gen_data(const Options& o, std::ostream& out) {
  auto c = detail::load_config(o.config_path);
  if (o.seed) c.world.seed = *o.seed;
  if (o.count < 1) throw UsageError("gen-data: --n must be >= 1");
  const auto ds = gen_dataset(c.world, o.count, o.out, o.workers, o.first_index);
  const auto sum = summarize(ds);
  out << "wrote " << o.out << "\n"
      << "samples " << sum.samples << " first_index " << ds.first_index << " seed " << c.world.seed << "\n"
      << "words " << sum.words << " speech_positions " << sum.speech_positions << "\n"
      << "speech/background chi2 " << detail::fmt(sum.independence_chi2) << " dof " << sum.independence_dof << "\n";
  return 0;
}

inline std::vector<WorldSample> training_pool(const RunConfig& c, const std::string& path) {
  auto ds = load_dataset(path, &c.world);
  if (ds.samples.size() > c.train.train_samples) ds.samples.resize(c.train.train_samples);
  return std::move(ds.samples);
}

inline int cmd_train(const Options& o, std::ostream& out) {
  auto c = detail::load_config(o.config_path);
  if (o.seed) c.train_seed = *o.seed;
  if (o.stage != "v2as" && o.stage != "vs2a") throw UsageError("train: --stage must be v2as or vs2a");
  auto pool = training_pool(c, o.data);
  std::vector<WorldSample> heldout;
  if (!o.heldout.empty()) heldout = load_dataset(o.heldout, &c.world).samples;
  const std::string log_path = o.log_path.empty() ? o.out + ".log" : o.log_path;
  std::ofstream log(log_path, o.resume.empty() ? std::ios::trunc : std::ios::app);
  if (!log) throw InputError("cannot write " + log_path);
  LoopOptions loop;
  loop.log_every = c.train.log_every;
  loop.checkpoint_every = c.train.checkpoint_every;
  loop.checkpoint_path = o.out;
  auto tee = [&](auto& trainer) {
    struct Tee : std::streambuf {
      std::ostream &a, &b;
      Tee(std::ostream& x, std::ostream& y) : a(x), b(y) {}
      int overflow(int ch) override {
        a.put(static_cast<char>(ch));
        b.put(static_cast<char>(ch));
        return ch;
      }
      int sync() override {
        a.flush();
        b.flush();
        return 0;
      }
    } buf(log, out);
    std::ostream both(&buf);
    run_training(trainer, loop, both);
  };
  if (o.stage == "v2as") {
    std::optional<V2ASTrainer> t;
    if (o.resume.empty()) t.emplace(c, std::move(pool));
    else t.emplace(c, std::move(pool), nn::load_checkpoint(o.resume));
    loop.until = o.steps ? *o.steps : t->total_steps();
    tee(*t);
    if (!heldout.empty()) {
      const auto acc = v2as_heldout_accuracy(t->model(), heldout, c.train.speech_disabled);
      out << "heldout background_acc " << detail::fmt(acc.background) << " speech_acc " << detail::fmt(acc.speech)
          << " samples " << heldout.size() << "\n";
    }
  } else {
    std::optional<VS2ATrainer> t;
    if (o.resume.empty()) t.emplace(c, std::move(pool));
    else t.emplace(c, std::move(pool), nn::load_checkpoint(o.resume));
    loop.until = o.steps ? *o.steps : t->total_steps();
    tee(*t);
    if (!heldout.empty()) {
      const auto acc = vs2a_heldout_accuracy(t->bundle(), heldout, c.vs2a_decode_steps, c.vs2a_cfg_scale,
                                             c.decode_seed, c.vs2a_decode());
      out << "heldout layer_match";
      for (auto a : acc) out << " " << detail::fmt(a);
      out << " samples " << heldout.size() << "\n";
    }
  }
  out << "checkpoint " << o.out << "\n";
  return 0;
}

inline int cmd_generate(const Options& o, std::ostream& out) {
  auto c = detail::load_config(o.config_path);
  if (o.seed) c.decode_seed = *o.seed;
  if (o.steps) c.v2as_decode.steps = *o.steps;
  if (o.cfg_scale) c.v2as_decode.cfg_scale = *o.cfg_scale;
  if (!o.vs2a_steps.empty()) {
    c.vs2a_decode_steps.clear();
    for (auto v : detail::parse_ids(o.vs2a_steps)) c.vs2a_decode_steps.push_back(v);
  }
  if (o.vs2a_cfg_scale) c.vs2a_cfg_scale = *o.vs2a_cfg_scale;
  c.validate();
  const auto v2as = load_v2as(c, nn::load_checkpoint(o.v2as_ckpt));
  const auto vs2a = load_vs2a(c, nn::load_checkpoint(o.vs2a_ckpt));
  const auto ds = load_dataset(o.data, &c.world);
  const SynthWorld world(c.world);
  std::vector<GenerationRequest> requests;
  if (o.transcript) {
    if (o.index >= ds.samples.size()) throw UsageError("generate: --index outside the dataset");
    const auto words = detail::parse_ids(*o.transcript);
    requests.push_back({&ds.samples[o.index].video, transcript_to_speech(words, world.lexicon(), c.world.t_sem),
                        ds.first_index + o.index});
  } else {
    std::optional<Dataset> source;
    if (!o.speech_from.empty()) {
      source = load_dataset(o.speech_from, &c.world);
      if (source->samples.size() < ds.samples.size())
        throw InputError("generate: --speech-from has fewer samples than --data");
    }
    const std::size_t n = o.count ? std::min(o.count, ds.samples.size()) : ds.samples.size();
    for (std::size_t i = 0; i < n; ++i) {
      const auto& s = ds.samples[i];
      auto speech = source ? oracle_speech_extract(source->samples[i].semantic, c.world.vocab) : s.speech;
      requests.push_back({&s.video, std::move(speech), ds.first_index + i});
    }
  }
  Generation g{c.hash(), generate_all(c, v2as, vs2a, requests, o.workers)};
  io::write_file(o.out, encode_generation(g, c.world.vocab.acoustic_layers));
  out << "wrote " << g.records.size() << " generations to " << o.out << "\n";
  return 0;
}

inline int cmd_eval(const Options& o, std::ostream& out) {
  const auto c = detail::load_config(o.config_path);
  const auto ref = load_dataset(o.data, &c.world);
  const auto bytes = io::read_file(o.generated);
  std::vector<GeneratedRecord> gen;
  if (is_generation_file(bytes)) {
    gen = decode_generation(bytes, o.generated).records;
  } else {
    const auto ds = decode_dataset(bytes, o.generated);
    gen = records_from_samples(ds.samples, ds.first_index);
  }
  auto samples = ref.samples;
  if (gen.size() < samples.size()) samples.resize(gen.size());
  if (gen.size() != samples.size())
    throw InputError("eval: " + std::to_string(gen.size()) + " generated records but only " +
                     std::to_string(ref.samples.size()) + " reference samples");
  EvalOptions eo;
  eo.fad_shrinkage = o.fad_shrinkage;
  const auto summary = evaluate(c.world, gen, samples, eo);
  const auto report = eval::format_report(report_rows(summary, eo, c.hash()));
  if (!o.out.empty()) io::write_file(o.out, report);
  out << report;
  return 0;
}

inline std::unique_ptr<CLI::App> make_app(Options& o) {
  auto app = std::make_unique<CLI::App>("Two-stage video-to-speech-and-background token pipeline", "bvs");
  app->require_subcommand(1);
  const DecodeConfig d;
  const RunConfig rc;

  auto common = [&](CLI::App* sub, bool workers) {
    sub->add_option("--config", o.config_path, "Run configuration file (key = value); defaults apply when omitted");
    sub->add_option("--seed", o.seed, "Override the relevant seed");
    if (workers) sub->add_option("--workers", o.workers, "Worker threads (results do not depend on it)")->capture_default_str();
  };

  auto* gen = app->add_subcommand("gen-data", "Generate a synthetic dataset");
  common(gen, true);
  gen->add_option("--n", o.count, "Number of samples (>= 1)")->required();
  gen->add_option("--first-index", o.first_index, "World index of the first sample")->capture_default_str();
  gen->add_option("--out", o.out, "Dataset file to write")->required();

  auto* train = app->add_subcommand("train", "Train one stage");
  common(train, false);
  train->add_option("--stage", o.stage, "v2as or vs2a")->required()->check(CLI::IsMember({"v2as", "vs2a"}));
  train->add_option("--data", o.data, "Training dataset")->required()->check(CLI::ExistingFile);
  train->add_option("--out", o.out, "Checkpoint file (written periodically and at the end)")->required();
  train->add_option("--steps", o.steps, "Stop at this step (default: train.v2as_steps / train.vs2a_steps)");
  train->add_option("--resume", o.resume, "Continue from a checkpoint")->check(CLI::ExistingFile);
  train->add_option("--log", o.log_path, "Training log (default: <out>.log)");
  train->add_option("--heldout", o.heldout, "Dataset for a held-out accuracy report at the end")->check(CLI::ExistingFile);

  auto* generate = app->add_subcommand("generate", "Run two-stage generation");
  common(generate, true);
  generate->add_option("--v2as", o.v2as_ckpt, "Stage-1 checkpoint")->required()->check(CLI::ExistingFile);
  generate->add_option("--vs2a", o.vs2a_ckpt, "Stage-2 checkpoint")->required()->check(CLI::ExistingFile);
  generate->add_option("--data", o.data, "Dataset providing video (and speech unless overridden)")
      ->required()
      ->check(CLI::ExistingFile);
  generate->add_option("--out", o.out, "Generation file to write")->required();
  generate->add_option("--count", o.count, "Generate for the first N samples (default: all)");
  generate->add_option("--steps", o.steps, "Stage-1 decoding steps")->default_str(std::to_string(d.steps));
  generate->add_option("--cfg-scale", o.cfg_scale, "Stage-1 guidance scale")->default_str(detail::fmt(d.cfg_scale));
  generate->add_option("--vs2a-steps", o.vs2a_steps, "Stage-2 decoding steps per layer")
      ->default_str(kv::fmt_list(rc.vs2a_decode_steps));
  generate->add_option("--vs2a-cfg-scale", o.vs2a_cfg_scale, "Stage-2 guidance scale")
      ->default_str(detail::fmt(rc.vs2a_cfg_scale));
  generate->add_option("--transcript", o.transcript, "Comma-separated word ids; uses the video of --index");
  generate->add_option("--index", o.index, "Dataset sample whose video is used with --transcript")->capture_default_str();
  generate->add_option("--speech-from", o.speech_from,
                       "Dataset whose semantic streams supply the speech condition (audio input mode)")
      ->check(CLI::ExistingFile);

  auto* ev = app->add_subcommand("eval", "Evaluate generations against reference samples");
  common(ev, true);
  ev->add_option("--generated", o.generated, "Generation file, or a dataset for self-evaluation")
      ->required()
      ->check(CLI::ExistingFile);
  ev->add_option("--data", o.data, "Reference dataset (paired by position)")->required()->check(CLI::ExistingFile);
  ev->add_option("--out", o.out, "Report file (tab-separated)");
  ev->add_option("--fad-shrinkage", o.fad_shrinkage, "Diagonal shrinkage for small sets (0 = off)")->capture_default_str();
  return app;
}

inline int run(std::vector<std::string> args, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
  Options o;
  auto app = make_app(o);
  try {
    std::reverse(args.begin(), args.end());
    app->parse(args);
  } catch (const CLI::CallForHelp&) {
    out << app->help();
    return 0;
  } catch (const CLI::CallForAllHelp&) {
    out << app->help("", CLI::AppFormatMode::All);
    return 0;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n" << "run with --help for usage\n";
    return 2;
  }
  const auto* sub = app->get_subcommands().front();
  const std::string name = sub->get_name();
  try {
    if (name == "gen-data") return cmd_gen_data(o, out);
    if (name == "train") return cmd_train(o, out);
    if (name == "generate") return cmd_generate(o, out);
    return cmd_eval(o, out);
  } catch (const UsageError& e) {
    err << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return 1;
  }
}

}  // namespace bvs::cli
