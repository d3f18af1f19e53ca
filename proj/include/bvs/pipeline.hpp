#pragma once

// Two-stage generation and evaluation against reference samples.
//
// Generation file: magic "BVSGEN\0\0", u32 version, str32 config hash,
// u32 K, u32 count, then per record u64 source index, the semantic list and
// K acoustic layer lists (u32 lists as in the dataset format).

#include <algorithm>
#include <cstdint>
#include <exception>
#include <string>
#include <thread>
#include <vector>

#include "bvs/errors.hpp"
#include "bvs/evalkit.hpp"
#include "bvs/io.hpp"
#include "bvs/run_config.hpp"
#include "bvs/synthworld.hpp"
#include "bvs/v2as.hpp"
#include "bvs/vs2a.hpp"

namespace bvs {

inline constexpr char kGenerationMagic[8] = {'B', 'V', 'S', 'G', 'E', 'N', '\0', '\0'};
inline constexpr std::uint32_t kGenerationVersion = 1;

struct GeneratedRecord {
  std::uint64_t source_index = 0;
  SemanticTokenSequence semantic;
  AcousticTokenGrid acoustic;

  bool operator==(const GeneratedRecord& o) const {
    return source_index == o.source_index && semantic.tokens == o.semantic.tokens && acoustic == o.acoustic;
  }
};

struct Generation {
  std::string config_hash;
  std::vector<GeneratedRecord> records;
};

inline std::string encode_generation(const Generation& g, std::size_t layers) {
  io::Writer w;
  w.raw(std::string(kGenerationMagic, 8));
  w.u32(kGenerationVersion);
  w.str32(g.config_hash);
  w.u32(static_cast<std::uint32_t>(layers));
  w.u32(static_cast<std::uint32_t>(g.records.size()));
  for (const auto& r : g.records) {
    if (r.acoustic.layers.size() != layers) throw ShapeError("generation record has the wrong layer count");
    w.u64(r.source_index);
    w.u32_list(r.semantic.tokens);
    for (const auto& l : r.acoustic.layers) w.u32_list(l);
  }
  return w.bytes();
}

inline bool is_generation_file(const std::string& bytes) {
  return bytes.size() >= 8 && bytes.compare(0, 8, std::string(kGenerationMagic, 8)) == 0;
}

inline Generation decode_generation(const std::string& bytes, const std::string& what = "generation") {
  if (!is_generation_file(bytes)) throw IntegrityError(what + ": not a generation file");
  io::Reader r(bytes, what);
  r.raw(8);
  if (const auto v = r.u32(); v != kGenerationVersion)
    throw IntegrityError(what + ": unsupported format version " + std::to_string(v));
  Generation g;
  g.config_hash = r.str32();
  const auto k = r.u32();
  const auto n = r.u32();
  g.records.resize(n);
  for (auto& rec : g.records) {
    rec.source_index = r.u64();
    rec.semantic.tokens = r.u32_list();
    rec.acoustic.layers.resize(k);
    for (auto& l : rec.acoustic.layers) {
      l = r.u32_list();
      if (l.size() != rec.semantic.tokens.size()) throw IntegrityError(what + ": layer length differs from semantic");
    }
  }
  if (!r.done()) throw IntegrityError(what + ": trailing bytes");
  return g;
}

/// Conditions for one generation: target video, speech stream, and the
/// index used to derive the decode seed.
struct GenerationRequest {
  const VideoFeatureSequence* video = nullptr;
  SpeechTokenSequence speech;
  std::uint64_t index = 0;
};

template <SemanticScorer Stage1, AcousticScorer Stage2>
GeneratedRecord generate_one(const RunConfig& c, const Stage1& v2as, const Stage2& vs2a, const GenerationRequest& req) {
  Rng rng(derive_seed(c.decode_seed, req.index));
  GeneratedRecord out;
  out.source_index = req.index;
  out.semantic = v2as_generate(v2as, *req.video, req.speech, c.v2as_decode, rng);
  out.acoustic = vs2a_generate(vs2a, out.semantic, *req.video, c.vs2a_decode_steps, c.vs2a_cfg_scale, rng, nullptr,
                               c.vs2a_decode());
  return out;
}

/// Requests are independent (per-index seeds), so the result does not depend
/// on the worker count.
template <SemanticScorer Stage1, AcousticScorer Stage2>
std::vector<GeneratedRecord> generate_all(const RunConfig& c, const Stage1& v2as, const Stage2& vs2a,
                                          const std::vector<GenerationRequest>& requests, std::size_t workers = 1) {
  std::vector<GeneratedRecord> out(requests.size());
  workers = std::max<std::size_t>(1, std::min(workers, requests.size()));
  if (workers == 1) {
    for (std::size_t i = 0; i < requests.size(); ++i) out[i] = generate_one(c, v2as, vs2a, requests[i]);
    return out;
  }
  std::vector<std::exception_ptr> errors(workers);
  std::vector<std::thread> pool;
  for (std::size_t w = 0; w < workers; ++w)
    pool.emplace_back([&, w] {
      try {
        for (std::size_t i = w; i < requests.size(); i += workers) out[i] = generate_one(c, v2as, vs2a, requests[i]);
      } catch (...) {
        errors[w] = std::current_exception();
      }
    });
  for (auto& t : pool) t.join();
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
  return out;
}

/// Generated records taken verbatim from reference samples (self-evaluation).
inline std::vector<GeneratedRecord> records_from_samples(const std::vector<WorldSample>& samples,
                                                         std::uint64_t first_index = 0) {
  std::vector<GeneratedRecord> out;
  for (std::size_t i = 0; i < samples.size(); ++i)
    out.push_back({first_index + i, samples[i].semantic, samples[i].acoustic});
  return out;
}

struct EvalOptions {
  double desync_max_offset = 25.0;
  double fad_shrinkage = 0.0;
  std::size_t embed_dim = 16;
  std::uint64_t embed_seed = 17;
};

struct EvalSummary {
  double wer = 0.0, wer_reference = 0.0, delta_wer = 0.0;
  std::size_t wer_count = 0, empty_reference = 0;
  double fad = 0.0, lpaps = 0.0, desync = 0.0;
  double speech_match = 0.0, background_match = 0.0, acoustic_agreement = 0.0;
  std::size_t count = 0;
};

/// Compares generated records with reference samples paired by position.
/// WER uses the oracle transcript of the generated speech component;
/// samples with an empty reference transcript are counted but excluded from
/// the WER aggregates.
inline EvalSummary evaluate(const WorldConfig& world_config, const std::vector<GeneratedRecord>& generated,
                            const std::vector<WorldSample>& reference, const EvalOptions& o = {}) {
  if (generated.size() != reference.size())
    throw InputError("eval: " + std::to_string(generated.size()) + " generated records vs " +
                     std::to_string(reference.size()) + " reference samples");
  if (generated.empty()) throw InputError("eval: nothing to evaluate");
  const SynthWorld world(world_config);
  const auto& vocab = world_config.vocab;
  const AcousticCodec& codec = world.codec();
  EvalSummary s;
  s.count = generated.size();
  std::vector<std::pair<double, double>> pairs;
  std::vector<TokenSeq> set_gen, set_ref;
  std::vector<std::pair<TokenSeq, TokenSeq>> frames;
  double desync = 0.0, wer_sum = 0.0, wer_ref_sum = 0.0;
  std::size_t sp_ok = 0, bg_ok = 0, ac_ok = 0, positions = 0;
  for (std::size_t i = 0; i < generated.size(); ++i) {
    const auto& g = generated[i];
    const auto& r = reference[i];
    if (g.semantic.tokens.size() != r.semantic.tokens.size())
      throw InputError("eval: record " + std::to_string(i) + " has a different length from its reference");
    const auto [g_speech, g_bg] = split_stream(g.semantic.tokens, vocab);
    const auto [r_speech, r_bg] = split_stream(r.semantic.tokens, vocab);
    const auto truth = r.transcript;
    const auto hyp = oracle_transcribe(SpeechTokenSequence{g_speech}, world.lexicon());
    const auto ref_hyp = oracle_transcribe(SpeechTokenSequence{r_speech}, world.lexicon());
    if (truth.empty()) {
      ++s.empty_reference;
    } else {
      const double w_pred = eval::wer(truth, hyp);
      const double w_gt = eval::wer(truth, ref_hyp);
      wer_sum += w_pred;
      wer_ref_sum += w_gt;
      pairs.emplace_back(w_gt, w_pred);
    }
    desync += eval::desync_analog(extract_event_onsets(g_bg), extract_event_onsets(r_bg), o.desync_max_offset);
    set_gen.push_back(g.semantic.tokens);
    set_ref.push_back(r.semantic.tokens);
    frames.emplace_back(g.semantic.tokens, r.semantic.tokens);
    const auto encoded = codec.encode(g.semantic.tokens);
    for (std::size_t p = 0; p < g.semantic.tokens.size(); ++p) {
      sp_ok += g_speech[p] == r_speech[p];
      bg_ok += g_bg[p] == r_bg[p];
      bool same = g.acoustic.layers.size() == encoded.layers.size();
      for (std::size_t k = 0; same && k < encoded.layers.size(); ++k)
        same = g.acoustic.layers[k].size() == encoded.layers[k].size() && g.acoustic.layers[k][p] == encoded.layers[k][p];
      ac_ok += same;
      ++positions;
    }
  }
  const double n = static_cast<double>(s.count);
  s.wer_count = pairs.size();
  if (!pairs.empty()) {
    s.wer = wer_sum / static_cast<double>(pairs.size());
    s.wer_reference = wer_ref_sum / static_cast<double>(pairs.size());
    s.delta_wer = eval::delta_wer(pairs);
  }
  s.desync = desync / n;
  const auto set_embedder = eval::SetEmbedder::histogram_projection(vocab.semantic_vocab_size(), o.embed_dim, o.embed_seed);
  s.fad = eval::fad(set_gen, set_ref, set_embedder, o.fad_shrinkage);
  const auto frame_embedder = eval::FrameEmbedder::lookup(vocab.semantic_vocab_size(), o.embed_dim, o.embed_seed);
  s.lpaps = eval::lpaps_proxy(frames, frame_embedder);
  s.speech_match = static_cast<double>(sp_ok) / static_cast<double>(positions);
  s.background_match = static_cast<double>(bg_ok) / static_cast<double>(positions);
  s.acoustic_agreement = static_cast<double>(ac_ok) / static_cast<double>(positions);
  return s;
}

inline std::vector<eval::ReportRow> report_rows(const EvalSummary& s, const EvalOptions& o, const std::string& hash) {
  const auto set_id = eval::SetEmbedder::histogram_projection(1, o.embed_dim, o.embed_seed).id;
  const auto frame_id = eval::FrameEmbedder::lookup(1, o.embed_dim, o.embed_seed).id;
  return {
      {"wer", s.wer, s.wer_count, "", hash},
      {"wer_reference", s.wer_reference, s.wer_count, "", hash},
      {"delta_wer", s.delta_wer, s.wer_count, "", hash},
      {"empty_reference", static_cast<double>(s.empty_reference), s.count, "", hash},
      {"fad", s.fad, s.count, set_id, hash},
      {"lpaps_proxy", s.lpaps, s.count, frame_id, hash},
      {"desync", s.desync, s.count, "", hash},
      {"speech_match", s.speech_match, s.count, "", hash},
      {"background_match", s.background_match, s.count, "", hash},
      {"acoustic_agreement", s.acoustic_agreement, s.count, "", hash},
  };
}

}  // namespace bvs
