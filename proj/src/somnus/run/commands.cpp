#include "somnus/run/commands.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <map>
#include <numeric>
#include <set>
#include <sstream>

#include "somnus/common.hpp"
#include "somnus/data/formats.hpp"
#include "somnus/data/synth.hpp"
#include "somnus/eval/hypnogram.hpp"
#include "somnus/eval/metrics.hpp"
#include "somnus/eval/probe.hpp"
#include "somnus/eval/scenarios.hpp"
#include "somnus/eval/splits.hpp"
#include "somnus/log.hpp"
#include "somnus/nn/checkpoint.hpp"
#include "somnus/nn/optim.hpp"
#include "somnus/plot/svg.hpp"

namespace somnus::run {

namespace {

using nlohmann::json;

fs::path data_dir(const fs::path& out) { return out / "data"; }
fs::path epochs_dir(const fs::path& out) { return out / "epochs"; }
fs::path ckpt_dir(const fs::path& out) { return out / "checkpoints"; }
fs::path logs_dir(const fs::path& out) { return out / "logs"; }
fs::path results_dir(const fs::path& out) { return out / "results"; }

void require_artifact(const fs::path& p, const std::string& what,
                      const std::string& producer) {
  if (!fs::exists(p))
    throw_missing(what + " not found at " + p.string() + "; run `" + producer +
                  "` first");
}

std::string fmt(double v) { return json(v).dump(); }

std::string lower(std::string s) {
  for (char& c : s) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return s;
}

// "EEG2" -> "eeg"
std::string modality_of_channel(const std::string& channel) {
  std::string prefix;
  for (char c : channel)
    if (!std::isdigit(static_cast<unsigned char>(c))) prefix += c;
  return lower(prefix);
}

std::string normalized_modspec(const std::vector<std::string>& channels) {
  std::string s;
  for (size_t i = 0; i < channels.size(); ++i) {
    if (i) s += '+';
    s += lower(channels[i]);
  }
  return s;
}

std::vector<std::string> tasks_from(const RunConfig& cfg) {
  const std::string t = cfg.text("task");
  if (t == "all") return {"stage", "apnea", "hypopnea"};
  if (t == "stage" || t == "apnea" || t == "hypopnea") return {t};
  throw_invalid("task must be stage, apnea, hypopnea, or all (got '" + t + "')");
}

// ---------------------------------------------------------------------------
// epoch store access

std::vector<std::string> stored_subjects(const fs::path& out) {
  require_artifact(epochs_dir(out), "epoch store directory", "preprocess");
  std::vector<std::string> ids;
  for (const auto& entry : fs::directory_iterator(epochs_dir(out)))
    if (entry.path().extension() == ".epo")
      ids.push_back(entry.path().stem().string());
  if (ids.empty())
    throw_missing("no epoch stores in " + epochs_dir(out).string() +
                  "; run `preprocess` first");
  std::sort(ids.begin(), ids.end());
  return ids;
}

signal::SubjectEpochs load_epochs(const fs::path& out, const std::string& id) {
  const fs::path p = epochs_dir(out) / (id + ".epo");
  require_artifact(p, "epoch store for subject " + id, "preprocess");
  return data::read_epoch_store(p);
}

long channel_index(const signal::SubjectEpochs& se, const std::string& name) {
  for (size_t i = 0; i < se.channel_names.size(); ++i)
    if (se.channel_names[i] == name) return static_cast<long>(i);
  throw_invalid("channel " + name + " is not stored for subject " +
                se.subject_id);
}

eval::SplitFold fold_for(const RunConfig& cfg,
                         const std::vector<std::string>& subjects) {
  const int fold_count = static_cast<int>(cfg.integer("eval.fold_count"));
  const int fold = static_cast<int>(cfg.integer("eval.fold"));
  const auto plan = eval::make_splits(subjects, fold_count, cfg.seed(),
                                      cfg.number("eval.pretrain_ratio"));
  if (fold < 0 || fold >= fold_count)
    throw_invalid("eval.fold must lie in [0, eval.fold_count)");
  return plan.folds[static_cast<size_t>(fold)];
}

// ---------------------------------------------------------------------------
// model config plumbing

model::NtXentMode contra_mode_from(const std::string& s) {
  if (s == "interleaved") return model::NtXentMode::interleaved;
  if (s == "banks") return model::NtXentMode::banks;
  throw_invalid("contra_mode must be interleaved or banks (got '" + s + "')");
}

const char* contra_mode_name(model::NtXentMode m) {
  return m == model::NtXentMode::interleaved ? "interleaved" : "banks";
}

model::BackboneConfig backbone_config(const RunConfig& cfg) {
  model::BackboneConfig bc;
  bc.enc_dim = cfg.integer("backbone.encoder_dim");
  bc.enc_depth = static_cast<int>(cfg.integer("backbone.encoder_depth"));
  bc.enc_heads = cfg.integer("backbone.encoder_head");
  bc.dec_dim = cfg.integer("backbone.decoder_dim");
  bc.dec_depth = static_cast<int>(cfg.integer("backbone.decoder_depth"));
  bc.dec_heads = cfg.integer("backbone.decoder_head");
  bc.projection_hidden = cfg.integers("backbone.projection_hidden");
  bc.temperature = cfg.number("backbone.temperature_scale");
  bc.mask_ratio = cfg.number("backbone.mask_ratio");
  bc.frame_size_s = cfg.number("backbone.frame_size");
  bc.overlap = cfg.number("backbone.overlap_step");
  bc.mlp_ratio = cfg.integer("backbone.mlp_ratio");
  bc.contra_mode = contra_mode_from(cfg.text("backbone.contra_mode"));
  bc.validate();
  return bc;
}

json backbone_cfg_json(const model::BackboneConfig& c) {
  return json{{"enc_dim", c.enc_dim},
              {"enc_depth", c.enc_depth},
              {"enc_heads", c.enc_heads},
              {"dec_dim", c.dec_dim},
              {"dec_depth", c.dec_depth},
              {"dec_heads", c.dec_heads},
              {"projection_hidden", c.projection_hidden},
              {"temperature", c.temperature},
              {"mask_ratio", c.mask_ratio},
              {"frame_size_s", c.frame_size_s},
              {"overlap", c.overlap},
              {"mlp_ratio", c.mlp_ratio},
              {"contra_mode", contra_mode_name(c.contra_mode)}};
}

model::BackboneConfig backbone_cfg_from_json(const json& j) {
  model::BackboneConfig c;
  c.enc_dim = j.at("enc_dim").get<long>();
  c.enc_depth = j.at("enc_depth").get<int>();
  c.enc_heads = j.at("enc_heads").get<long>();
  c.dec_dim = j.at("dec_dim").get<long>();
  c.dec_depth = j.at("dec_depth").get<int>();
  c.dec_heads = j.at("dec_heads").get<long>();
  c.projection_hidden = j.at("projection_hidden").get<std::vector<long>>();
  c.temperature = j.at("temperature").get<double>();
  c.mask_ratio = j.at("mask_ratio").get<double>();
  c.frame_size_s = j.at("frame_size_s").get<double>();
  c.overlap = j.at("overlap").get<double>();
  c.mlp_ratio = j.at("mlp_ratio").get<long>();
  c.contra_mode = contra_mode_from(j.at("contra_mode").get<std::string>());
  return c;
}

model::FusionConfig fusion_config(const RunConfig& cfg) {
  model::FusionConfig fc;
  fc.mm_dim = cfg.integer("fusion.encoder_dim");
  fc.mm_depth = static_cast<int>(cfg.integer("fusion.encoder_depth"));
  fc.mm_heads = cfg.integer("fusion.encoder_head");
  fc.dec_dim = cfg.integer("fusion.decoder_dim");
  fc.dec_depth = static_cast<int>(cfg.integer("fusion.decoder_depth"));
  fc.dec_heads = cfg.integer("fusion.decoder_head");
  fc.projection_hidden = cfg.integers("fusion.projection_hidden");
  fc.temperature = cfg.number("fusion.temperature_scale");
  fc.mask_ratio = cfg.number("fusion.mask_ratio");
  fc.lora.rank = cfg.integer("fusion.lora_r");
  fc.lora.alpha = cfg.number("fusion.lora_alpha");
  fc.lora.dropout = cfg.number("fusion.lora_dropout");
  fc.contra_weight = cfg.number("fusion.contra_weight");
  fc.mlp_ratio = cfg.integer("fusion.mlp_ratio");
  fc.contra_mode = contra_mode_from(cfg.text("fusion.contra_mode"));
  fc.validate();
  return fc;
}

json fusion_cfg_json(const model::FusionConfig& c) {
  return json{{"mm_dim", c.mm_dim},
              {"mm_depth", c.mm_depth},
              {"mm_heads", c.mm_heads},
              {"dec_dim", c.dec_dim},
              {"dec_depth", c.dec_depth},
              {"dec_heads", c.dec_heads},
              {"projection_hidden", c.projection_hidden},
              {"temperature", c.temperature},
              {"mask_ratio", c.mask_ratio},
              {"lora_r", c.lora.rank},
              {"lora_alpha", c.lora.alpha},
              {"lora_dropout", c.lora.dropout},
              {"contra_weight", c.contra_weight},
              {"mlp_ratio", c.mlp_ratio},
              {"contra_mode", contra_mode_name(c.contra_mode)}};
}

model::FusionConfig fusion_cfg_from_json(const json& j) {
  model::FusionConfig c;
  c.mm_dim = j.at("mm_dim").get<long>();
  c.mm_depth = j.at("mm_depth").get<int>();
  c.mm_heads = j.at("mm_heads").get<long>();
  c.dec_dim = j.at("dec_dim").get<long>();
  c.dec_depth = j.at("dec_depth").get<int>();
  c.dec_heads = j.at("dec_heads").get<long>();
  c.projection_hidden = j.at("projection_hidden").get<std::vector<long>>();
  c.temperature = j.at("temperature").get<double>();
  c.mask_ratio = j.at("mask_ratio").get<double>();
  c.lora.rank = j.at("lora_r").get<long>();
  c.lora.alpha = j.at("lora_alpha").get<double>();
  c.lora.dropout = j.at("lora_dropout").get<double>();
  c.contra_weight = j.at("contra_weight").get<double>();
  c.mlp_ratio = j.at("mlp_ratio").get<long>();
  c.contra_mode = contra_mode_from(j.at("contra_mode").get<std::string>());
  return c;
}

model::TcmConfig tcm_config(const RunConfig& cfg) {
  model::TcmConfig tc;
  tc.context_length = static_cast<int>(cfg.integer("scenario2.context_length"));
  tc.ssm_depth = static_cast<int>(cfg.integer("scenario2.mamba_layers"));
  tc.d_state = cfg.integer("scenario2.mamba_d_state");
  tc.d_conv = cfg.integer("scenario2.mamba_d_conv");
  tc.expand = cfg.integer("scenario2.mamba_expand");
  tc.center_target = cfg.boolean("scenario2.center_target");
  tc.validate();
  return tc;
}

// ---------------------------------------------------------------------------
// training log

class TrainLog {
 public:
  explicit TrainLog(const fs::path& path) {
    fs::create_directories(path.parent_path());
    out_.open(path);
    if (!out_) throw_io("cannot write training log " + path.string());
    out_ << "step,recon,contra,total,lr\n";
  }
  void row(long step, double recon, double contra, double total, double lr) {
    out_ << step << ',' << fmt(recon) << ',' << fmt(contra) << ','
         << fmt(total) << ',' << fmt(lr) << "\n";
  }

 private:
  std::ofstream out_;
};

// ---------------------------------------------------------------------------
// csv helpers

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> fields;
  std::string cur;
  for (char c : line) {
    if (c == ',') {
      fields.push_back(cur);
      cur.clear();
    } else if (c != '\r') {
      cur += c;
    }
  }
  fields.push_back(cur);
  return fields;
}

std::vector<std::vector<std::string>> read_csv(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw_io("cannot read " + path.string());
  std::vector<std::vector<std::string>> rows;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    rows.push_back(split_csv_line(line));
  }
  return rows;
}

double parse_number(const std::string& s, const fs::path& where) {
  try {
    size_t pos = 0;
    const double v = std::stod(s, &pos);
    if (pos != s.size()) throw std::invalid_argument(s);
    return v;
  } catch (const std::exception&) {
    throw_corrupt("malformed numeric field '" + s + "' in " + where.string());
  }
}

int parse_int(const std::string& s, const fs::path& where) {
  try {
    size_t pos = 0;
    const int v = std::stoi(s, &pos);
    if (pos != s.size()) throw std::invalid_argument(s);
    return v;
  } catch (const std::exception&) {
    throw_corrupt("malformed integer field '" + s + "' in " + where.string());
  }
}

// ---------------------------------------------------------------------------
// results ledger: one row per (fold, scenario, task, modalities,
// label_fraction), upserted so reruns stay idempotent.

const char* kLedgerHeader =
    "fold,scenario,task,modalities,label_fraction,accuracy,macro_f1,kappa";

struct LedgerRow {
  int fold = 0;
  std::string scenario, task, modalities;
  double label_fraction = 1.0;
  double acc = 0.0, mf1 = 0.0, kappa = 0.0;
};

void upsert_ledger(const fs::path& path, const LedgerRow& row) {
  std::map<std::string, std::string> rows;
  if (fs::exists(path)) {
    const auto existing = read_csv(path);
    if (existing.empty() || existing[0] != split_csv_line(kLedgerHeader))
      throw_corrupt("unexpected ledger header in " + path.string());
    for (size_t i = 1; i < existing.size(); ++i) {
      const auto& f = existing[i];
      if (f.size() != 8)
        throw_corrupt("malformed ledger row in " + path.string());
      const std::string key = f[0] + "|" + f[1] + "|" + f[2] + "|" + f[3] +
                              "|" + f[4];
      std::string line;
      for (size_t c = 0; c < f.size(); ++c) line += (c ? "," : "") + f[c];
      rows[key] = line;
    }
  }
  const std::string frac = fmt(row.label_fraction);
  const std::string key = std::to_string(row.fold) + "|" + row.scenario + "|" +
                          row.task + "|" + row.modalities + "|" + frac;
  rows[key] = std::to_string(row.fold) + "," + row.scenario + "," + row.task +
              "," + row.modalities + "," + frac + "," + fmt(row.acc) + "," +
              fmt(row.mf1) + "," + fmt(row.kappa);
  fs::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw_io("cannot write ledger " + path.string());
  out << kLedgerHeader << "\n";
  for (const auto& [k, line] : rows) out << line << "\n";
}

// ---------------------------------------------------------------------------
// frame caches shared by the model-facing commands

struct SubjectFrames {
  std::string id;
  std::vector<std::vector<nn::Mat>> per_epoch;  // [epoch][stream]
  std::vector<int> stage, apnea, hypopnea;
  std::vector<int> epoch_index;
};

SubjectFrames collect_frames(const signal::SubjectEpochs& se,
                             const std::vector<std::string>& channels,
                             double frame_size_s, double overlap) {
  SubjectFrames sf;
  sf.id = se.subject_id;
  std::vector<long> idx;
  for (const auto& ch : channels) idx.push_back(channel_index(se, ch));
  for (const auto& ep : se.epochs) {
    std::vector<nn::Mat> per_stream;
    for (long ci : idx)
      per_stream.push_back(
          signal::frame_tokenize(ep.signals[static_cast<size_t>(ci)],
                                 frame_size_s, overlap)
              .frames);
    sf.per_epoch.push_back(std::move(per_stream));
    sf.stage.push_back(ep.stage ? static_cast<int>(*ep.stage) : -1);
    sf.apnea.push_back(ep.apnea);
    sf.hypopnea.push_back(ep.hypopnea);
    sf.epoch_index.push_back(ep.epoch_index);
  }
  return sf;
}

std::vector<SubjectFrames> collect_frames_for(
    const fs::path& out, const std::vector<std::string>& subjects,
    const std::vector<std::string>& channels, double frame_size_s,
    double overlap) {
  std::vector<SubjectFrames> all;
  for (const auto& id : subjects)
    all.push_back(
        collect_frames(load_epochs(out, id), channels, frame_size_s, overlap));
  return all;
}

eval::LabeledFeatures features_for(const model::FusionModel& m,
                                   const std::vector<SubjectFrames>& subs) {
  long rows = 0;
  for (const auto& s : subs) rows += static_cast<long>(s.per_epoch.size());
  eval::LabeledFeatures f;
  f.x.resize(rows, m.cfg.mm_dim);
  long r = 0;
  for (const auto& s : subs) {
    for (size_t e = 0; e < s.per_epoch.size(); ++e) {
      f.x.row(r) = eval::pooled_feature(m, s.per_epoch[e]);
      f.stage.push_back(s.stage[e]);
      f.apnea.push_back(s.apnea[e]);
      f.hypopnea.push_back(s.hypopnea[e]);
      f.subject.push_back(s.id);
      f.epoch_index.push_back(s.epoch_index[e]);
      ++r;
    }
  }
  return f;
}

std::vector<eval::SubjectBlockCache> caches_for(
    const model::FusionModel& m, const std::vector<SubjectFrames>& subs) {
  const int block = m.cfg.mm_depth - 1;
  std::vector<eval::SubjectBlockCache> caches;
  for (const auto& s : subs) {
    eval::SubjectBlockCache c;
    c.id = s.id;
    for (const auto& frames : s.per_epoch)
      c.block_inputs.push_back(m.block_input_eval(frames, block));
    c.stage = s.stage;
    c.apnea = s.apnea;
    c.hypopnea = s.hypopnea;
    caches.push_back(std::move(c));
  }
  return caches;
}

// ---------------------------------------------------------------------------
// fusion checkpoint round trip

struct FusionBundle {
  model::FusionModel model;
  std::vector<std::string> channels;  // uppercase, stream order
  std::string modspec;                // normalized lowercase a+b+c
  double frame_size_s = 3.0;
  double overlap = 0.75;
};

json fusion_meta(const model::FusionModel& m, long frame_len,
                 double frame_size_s, double overlap, int epoch) {
  json streams = json::array();
  for (const auto& s : m.streams)
    streams.push_back({{"name", s.name}, {"base", s.base}});
  json bases = json::object();
  for (const auto& [key, b] : m.bases)
    bases[key] = backbone_cfg_json(b->cfg);
  return json{{"kind", "fusion"},
              {"epoch", epoch},
              {"frame_len", frame_len},
              {"frame_size_s", frame_size_s},
              {"overlap", overlap},
              {"config", fusion_cfg_json(m.cfg)},
              {"streams", streams},
              {"bases", bases}};
}

FusionBundle load_fusion(const fs::path& ckpt_path) {
  require_artifact(ckpt_path, "fusion checkpoint", "pretrain-fusion");
  const json meta = nn::read_checkpoint_meta(ckpt_path);
  if (meta.value("kind", "") != "fusion")
    throw_corrupt(ckpt_path.string() + " is not a fusion checkpoint");
  const long frame_len = meta.at("frame_len").get<long>();

  std::map<std::string, std::shared_ptr<model::Backbone>> bases;
  Rng rng(derive_seed(1, "fusion-rebuild"));
  for (const auto& [key, bj] : meta.at("bases").items())
    bases[key] = std::make_shared<model::Backbone>(backbone_cfg_from_json(bj),
                                                   frame_len, rng);
  std::vector<model::StreamSpec> streams;
  for (const auto& sj : meta.at("streams"))
    streams.push_back({sj.at("name").get<std::string>(),
                       sj.at("base").get<std::string>()});

  FusionBundle b{model::FusionModel(fusion_cfg_from_json(meta.at("config")),
                                    streams, bases, rng),
                 {},
                 "",
                 meta.at("frame_size_s").get<double>(),
                 meta.at("overlap").get<double>()};
  nn::Params params;
  b.model.collect_all(params);
  nn::load_checkpoint(ckpt_path, params);
  nn::set_trainable(params, false);
  for (const auto& s : streams) {
    std::string up;
    for (char c : s.name)
      up += static_cast<char>(std::toupper(static_cast<unsigned char>(c)));
    b.channels.push_back(up);
  }
  b.modspec = normalized_modspec(b.channels);
  return b;
}

// ---------------------------------------------------------------------------
// commands

void cmd_gen_synth(RunConfig& cfg) {
  const fs::path out = cfg.out_dir();
  cfg.write_resolved(out);
  data::SynthSpec spec;
  spec.subject_count = static_cast<int>(cfg.integer("synth.subject_count"));
  spec.epochs_per_subject =
      static_cast<int>(cfg.integer("synth.epochs_per_subject"));
  spec.seed = derive_seed(cfg.seed(), "synth");
  spec.apnea.rate = cfg.number("synth.apnea_rate");
  spec.hypopnea.rate = cfg.number("synth.hypopnea_rate");
  spec.unscored_rate = cfg.number("synth.unscored_rate");
  data::validate_spec(spec);
  const auto records = data::generate(spec);
  data::write_dataset(records, data_dir(out));
  SOMNUS_INFO("gen-synth: " << records.size() << " subjects, "
                            << spec.epochs_per_subject << " epochs each -> "
                            << data_dir(out).string());
}

void cmd_preprocess(RunConfig& cfg) {
  const fs::path out = cfg.out_dir();
  cfg.write_resolved(out);
  const fs::path manifest_path = data_dir(out) / "manifest.json";
  require_artifact(manifest_path, "dataset manifest", "gen-synth");
  const auto manifest = data::read_manifest(manifest_path);

  const std::string rule_name = cfg.text("preprocess.event_rule");
  signal::EventLabelRule rule;
  if (rule_name == "any")
    rule = signal::EventLabelRule::any_overlap;
  else if (rule_name == "majority")
    rule = signal::EventLabelRule::majority_overlap;
  else
    throw_invalid("preprocess.event_rule must be any or majority");

  fs::create_directories(epochs_dir(out));
  for (const auto& ref : manifest.subjects) {
    const auto raw = data::read_record(data_dir(out), ref);
    const auto prepped = signal::preprocess(raw);
    const auto se = signal::segment_and_label(prepped, rule);
    data::write_epoch_store(se, epochs_dir(out) / (se.subject_id + ".epo"));
    SOMNUS_INFO("preprocess: " << se.subject_id << " -> " << se.epochs.size()
                               << " epochs");
  }
}

void cmd_pretrain_backbone(RunConfig& cfg) {
  const fs::path out = cfg.out_dir();
  cfg.write_resolved(out);
  const auto channels = parse_modalities(cfg.text("modalities"));
  const auto subjects = stored_subjects(out);
  const auto fold = fold_for(cfg, subjects);
  const auto bc = backbone_config(cfg);

  std::map<std::string, std::vector<std::string>> by_modality;
  for (const auto& ch : channels) by_modality[modality_of_channel(ch)].push_back(ch);

  for (const auto& [mod, chans] : by_modality) {
    std::vector<nn::Mat> train_frames;
    long frame_len = 0;
    for (const auto& id : fold.pretrain_subjects) {
      const auto se = load_epochs(out, id);
      std::vector<long> idx;
      for (const auto& ch : chans) idx.push_back(channel_index(se, ch));
      for (const auto& ep : se.epochs)
        for (long ci : idx) {
          auto seq = signal::frame_tokenize(
              ep.signals[static_cast<size_t>(ci)], bc.frame_size_s, bc.overlap);
          frame_len = seq.frames.cols();
          train_frames.push_back(std::move(seq.frames));
        }
    }
    if (train_frames.empty())
      throw_invalid("no pretraining epochs available for modality " + mod);

    Rng init_rng(derive_seed(cfg.seed(), "backbone-init-" + mod));
    model::Backbone model(bc, frame_len, init_rng);
    nn::Params params;
    model.collect(params, "backbone");

    nn::AdamWConfig oc;
    oc.lr = cfg.number("backbone.learning_rate");
    nn::AdamW opt(params, oc);
    TrainLog log(logs_dir(out) / ("backbone_" + mod + ".csv"));
    Rng train_rng(derive_seed(cfg.seed(), "backbone-train-" + mod));

    const long batch = cfg.integer("backbone.batch_size");
    const int n_epochs = static_cast<int>(cfg.integer("backbone.epoch"));
    if (batch <= 0 || n_epochs <= 0)
      throw_invalid("backbone batch_size and epoch must be positive");
    std::vector<size_t> order(train_frames.size());
    std::iota(order.begin(), order.end(), size_t{0});

    long step = 0;
    for (int e = 0; e < n_epochs; ++e) {
      train_rng.shuffle(order);
      double epoch_total = 0.0;
      long batches = 0;
      for (size_t at = 0; at < order.size(); at += static_cast<size_t>(batch)) {
        const size_t hi =
            std::min(order.size(), at + static_cast<size_t>(batch));
        std::vector<nn::Mat> batch_frames;
        for (size_t i = at; i < hi; ++i)
          batch_frames.push_back(train_frames[order[i]]);
        const auto losses = model.pretrain_step(batch_frames, train_rng, true);
        nn::backward(losses.total);
        opt.step();
        opt.zero_grad();
        log.row(step++, losses.recon.value()(0, 0), losses.contra.value()(0, 0),
                losses.total.value()(0, 0), oc.lr);
        epoch_total += losses.total.value()(0, 0);
        ++batches;
      }
      SOMNUS_INFO("backbone[" << mod << "] epoch " << (e + 1) << "/" << n_epochs
                              << " mean loss "
                              << epoch_total / std::max<long>(1, batches));
    }

    fs::create_directories(ckpt_dir(out));
    const json meta{{"kind", "backbone"},
                    {"modality", mod},
                    {"frame_len", frame_len},
                    {"config", backbone_cfg_json(bc)}};
    nn::save_checkpoint(ckpt_dir(out) / ("backbone_" + mod + ".ckpt"), params,
                        meta);
  }
}

std::shared_ptr<model::Backbone> load_backbone(const fs::path& out,
                                               const std::string& mod,
                                               long* frame_len_out) {
  const fs::path p = ckpt_dir(out) / ("backbone_" + mod + ".ckpt");
  require_artifact(p, "backbone checkpoint for " + mod, "pretrain-backbone");
  const json meta = nn::read_checkpoint_meta(p);
  if (meta.value("kind", "") != "backbone" ||
      meta.value("modality", "") != mod)
    throw_corrupt(p.string() + " is not a backbone checkpoint for " + mod);
  const long frame_len = meta.at("frame_len").get<long>();
  Rng rng(derive_seed(1, "backbone-rebuild"));
  auto b = std::make_shared<model::Backbone>(
      backbone_cfg_from_json(meta.at("config")), frame_len, rng);
  nn::Params params;
  b->collect(params, "backbone");
  nn::load_checkpoint(p, params);
  if (frame_len_out) *frame_len_out = frame_len;
  return b;
}

void cmd_pretrain_fusion(RunConfig& cfg) {
  const fs::path out = cfg.out_dir();
  cfg.write_resolved(out);
  const auto channels = parse_modalities(cfg.text("modalities"));
  const auto subjects = stored_subjects(out);
  const auto fold = fold_for(cfg, subjects);
  const auto fc = fusion_config(cfg);
  const double frame_size_s = cfg.number("backbone.frame_size");
  const double overlap = cfg.number("backbone.overlap_step");

  std::vector<model::StreamSpec> streams;
  for (const auto& ch : channels)
    streams.push_back({lower(ch), modality_of_channel(ch)});
  std::map<std::string, std::shared_ptr<model::Backbone>> bases;
  long frame_len = 0;
  for (const auto& s : streams)
    if (!bases.count(s.base)) bases[s.base] = load_backbone(out, s.base, &frame_len);

  Rng init_rng(derive_seed(cfg.seed(), "fusion-init"));
  model::FusionModel m(fc, streams, bases, init_rng);
  nn::Params base_params;
  m.collect_bases(base_params);
  nn::set_trainable(base_params, false);
  nn::Params train_params;
  m.collect_trainable(train_params);

  const auto train_subs = collect_frames_for(out, fold.pretrain_subjects,
                                             channels, frame_size_s, overlap);
  std::vector<const std::vector<nn::Mat>*> samples;
  for (const auto& s : train_subs)
    for (const auto& per_stream : s.per_epoch) samples.push_back(&per_stream);
  if (samples.empty()) throw_invalid("no pretraining epochs for fusion");

  nn::AdamWConfig oc;
  oc.lr = cfg.number("fusion.learning_rate");
  nn::AdamW opt(train_params, oc);
  TrainLog log(logs_dir(out) / "fusion.csv");
  Rng train_rng(derive_seed(cfg.seed(), "fusion-train"));

  const long batch = cfg.integer("fusion.batch_size");
  const int n_epochs = static_cast<int>(cfg.integer("fusion.epoch"));
  const long save_every = cfg.integer("fusion.save_every");
  if (batch <= 0 || n_epochs <= 0)
    throw_invalid("fusion batch_size and epoch must be positive");
  std::vector<size_t> order(samples.size());
  std::iota(order.begin(), order.end(), size_t{0});
  fs::create_directories(ckpt_dir(out));

  nn::Params all_params;
  m.collect_all(all_params);

  long step = 0;
  for (int e = 0; e < n_epochs; ++e) {
    train_rng.shuffle(order);
    double epoch_total = 0.0;
    long batches = 0;
    for (size_t at = 0; at < order.size(); at += static_cast<size_t>(batch)) {
      const size_t hi = std::min(order.size(), at + static_cast<size_t>(batch));
      std::vector<std::vector<nn::Mat>> batch_samples;
      for (size_t i = at; i < hi; ++i) batch_samples.push_back(*samples[order[i]]);
      const auto losses = m.pretrain_step(batch_samples, train_rng, true);
      nn::backward(losses.total);
      opt.step();
      opt.zero_grad();
      log.row(step++, losses.recon.value()(0, 0), losses.contra.value()(0, 0),
              losses.total.value()(0, 0), oc.lr);
      epoch_total += losses.total.value()(0, 0);
      ++batches;
    }
    SOMNUS_INFO("fusion epoch " << (e + 1) << "/" << n_epochs << " mean loss "
                                << epoch_total / std::max<long>(1, batches));
    if (save_every > 0 && (e + 1) % save_every == 0) {
      char name[48];
      std::snprintf(name, sizeof(name), "fusion_epoch_%03d.ckpt", e + 1);
      nn::save_checkpoint(ckpt_dir(out) / name, all_params,
                          fusion_meta(m, frame_len, frame_size_s, overlap,
                                      e + 1));
    }
  }
  nn::save_checkpoint(
      ckpt_dir(out) / "fusion.ckpt", all_params,
      fusion_meta(m, frame_len, frame_size_s, overlap, n_epochs));
  SOMNUS_INFO("fusion checkpoint -> "
              << (ckpt_dir(out) / "fusion.ckpt").string());
}

std::string scenario_file_tag(const std::string& scenario_label) {
  std::string tag = scenario_label;
  for (char& c : tag)
    if (c == '-') c = '_';
  return tag;
}

void write_outputs(const fs::path& out, const RunConfig& cfg,
                   const std::string& scenario_label,
                   const std::string& modspec, double label_fraction,
                   const eval::ScenarioResult& result) {
  fs::create_directories(results_dir(out));
  const int fold = static_cast<int>(cfg.integer("eval.fold"));
  for (const auto& [task, rep] : result) {
    const fs::path pred_path =
        results_dir(out) /
        ("predictions_s" + scenario_file_tag(scenario_label) + "_" + task +
         ".csv");
    std::ofstream pf(pred_path);
    if (!pf) throw_io("cannot write " + pred_path.string());
    pf << "subject,epoch,truth,pred\n";
    for (size_t i = 0; i < rep.truth.size(); ++i)
      pf << rep.subject[i] << ',' << rep.epoch_index[i] << ',' << rep.truth[i]
         << ',' << rep.pred[i] << "\n";

    upsert_ledger(results_dir(out) / "ledger.csv",
                  {fold, scenario_label, task, modspec, label_fraction,
                   rep.metrics.acc, rep.metrics.mf1, rep.metrics.kappa});
    std::cout << "scenario " << scenario_label << " " << task
              << ": accuracy=" << fmt(rep.metrics.acc)
              << " macro_f1=" << fmt(rep.metrics.mf1)
              << " kappa=" << fmt(rep.metrics.kappa) << " (n="
              << rep.truth.size() << ")\n";
  }
}

void cmd_train(RunConfig& cfg) {
  const fs::path out = cfg.out_dir();
  cfg.write_resolved(out);
  const int scenario = static_cast<int>(cfg.integer("scenario"));
  if (scenario < 1 || scenario > 3)
    throw_invalid("scenario must be 1, 2, or 3");
  const auto tasks = tasks_from(cfg);
  const int fold_index = static_cast<int>(cfg.integer("eval.fold"));

  auto bundle = load_fusion(ckpt_dir(out) / "fusion.ckpt");
  auto& m = bundle.model;
  const auto subjects = stored_subjects(out);
  const auto fold = fold_for(cfg, subjects);
  const auto train_subs = collect_frames_for(
      out, fold.train_subjects, bundle.channels, bundle.frame_size_s,
      bundle.overlap);
  const auto test_subs = collect_frames_for(
      out, fold.test_subjects, bundle.channels, bundle.frame_size_s,
      bundle.overlap);

  eval::Scenario1Config c1;
  c1.epochs = static_cast<int>(cfg.integer("scenario1.epoch"));
  c1.batch = cfg.integer("scenario1.batch_size");
  c1.lr = cfg.number("scenario1.learning_rate");
  c1.tasks = tasks;

  eval::Scenario2Config c2;
  c2.epochs = static_cast<int>(cfg.integer("scenario2.epoch"));
  c2.batch = cfg.integer("scenario2.batch_size");
  c2.lr = cfg.number("scenario2.learning_rate");
  c2.weight_decay = cfg.number("scenario2.weight_decay");
  c2.tcm = tcm_config(cfg);
  c2.tasks = tasks;

  if (scenario == 1) {
    c1.seed = derive_seed(cfg.seed(), "scenario-run", 1,
                          static_cast<uint64_t>(fold_index));
    const auto f_train = features_for(m, train_subs);
    const auto f_test = features_for(m, test_subs);
    const auto res = eval::run_scenario1(m, f_train, f_test, c1);
    write_outputs(out, cfg, "1", bundle.modspec, 1.0, res);
  } else if (scenario == 2) {
    c2.seed = derive_seed(cfg.seed(), "scenario-run", 2,
                          static_cast<uint64_t>(fold_index));
    const auto ca_train = caches_for(m, train_subs);
    const auto ca_test = caches_for(m, test_subs);
    const auto res = eval::run_scenario2(m, ca_train, ca_test, c2);
    write_outputs(out, cfg, "2", bundle.modspec, 1.0, res);
  } else {
    eval::Scenario3Config c3;
    c3.label_fraction = cfg.number("scenario3.label_fraction");
    c3.seed = derive_seed(cfg.seed(), "scenario-run", 3,
                          static_cast<uint64_t>(fold_index));
    c1.seed = derive_seed(c3.seed, "s1");
    c2.seed = derive_seed(c3.seed, "s2");
    c3.s1 = c1;
    c3.s2 = c2;
    const auto f_train = features_for(m, train_subs);
    const auto f_test = features_for(m, test_subs);
    const auto ca_train = caches_for(m, train_subs);
    const auto ca_test = caches_for(m, test_subs);
    const auto res =
        eval::run_scenario3(m, f_train, f_test, ca_train, ca_test, c3);
    write_outputs(out, cfg, "3-linear", bundle.modspec, c3.label_fraction,
                  res.s1);
    write_outputs(out, cfg, "3-context", bundle.modspec, c3.label_fraction,
                  res.s2);
  }
}

std::vector<std::string> scenario_labels(int scenario) {
  if (scenario == 1) return {"1"};
  if (scenario == 2) return {"2"};
  if (scenario == 3) return {"3-linear", "3-context"};
  throw_invalid("scenario must be 1, 2, or 3");
}

void cmd_evaluate(RunConfig& cfg) {
  const fs::path out = cfg.out_dir();
  cfg.write_resolved(out);
  const int scenario = static_cast<int>(cfg.integer("scenario"));
  const auto tasks = tasks_from(cfg);
  // Ledger rows are keyed by the stream combination actually trained, so
  // prefer the checkpoint metadata over the config when it is available.
  std::string modspec =
      normalized_modspec(parse_modalities(cfg.text("modalities")));
  if (const fs::path fck = ckpt_dir(out) / "fusion.ckpt"; fs::exists(fck)) {
    const json meta = nn::read_checkpoint_meta(fck);
    if (meta.contains("streams")) {
      std::vector<std::string> chans;
      for (const auto& sj : meta.at("streams"))
        chans.push_back(sj.at("name").get<std::string>());
      modspec = normalized_modspec(chans);
    }
  }
  const double fraction =
      scenario == 3 ? cfg.number("scenario3.label_fraction") : 1.0;
  const int fold = static_cast<int>(cfg.integer("eval.fold"));

  for (const auto& label : scenario_labels(scenario)) {
    for (const auto& task : tasks) {
      const fs::path pred_path =
          results_dir(out) /
          ("predictions_s" + scenario_file_tag(label) + "_" + task + ".csv");
      require_artifact(pred_path, "predictions for scenario " + label +
                                      " task " + task,
                       "train");
      const auto rows = read_csv(pred_path);
      if (rows.empty() || rows[0] != split_csv_line("subject,epoch,truth,pred"))
        throw_corrupt("unexpected predictions header in " +
                      pred_path.string());
      std::vector<int> truth, pred;
      for (size_t i = 1; i < rows.size(); ++i) {
        if (rows[i].size() != 4)
          throw_corrupt("malformed predictions row in " + pred_path.string());
        truth.push_back(parse_int(rows[i][2], pred_path));
        pred.push_back(parse_int(rows[i][3], pred_path));
      }
      if (truth.empty())
        throw_corrupt("no prediction rows in " + pred_path.string());
      const auto rep = eval::classification_report(truth, pred);
      upsert_ledger(results_dir(out) / "ledger.csv",
                    {fold, label, task, modspec, fraction, rep.acc, rep.mf1,
                     rep.kappa});
      std::cout << "scenario " << label << " " << task
                << ": accuracy=" << fmt(rep.acc) << " macro_f1=" << fmt(rep.mf1)
                << " kappa=" << fmt(rep.kappa) << " (n=" << truth.size()
                << ")\n";
    }
  }
}

void cmd_knn_probe(RunConfig& cfg) {
  const fs::path out = cfg.out_dir();
  cfg.write_resolved(out);
  std::vector<fs::path> ckpts;
  if (fs::exists(ckpt_dir(out)))
    for (const auto& entry : fs::directory_iterator(ckpt_dir(out))) {
      const std::string name = entry.path().filename().string();
      if (name.rfind("fusion_epoch_", 0) == 0 &&
          entry.path().extension() == ".ckpt")
        ckpts.push_back(entry.path());
    }
  if (ckpts.empty())
    throw_missing("no per-epoch fusion checkpoints in " +
                  ckpt_dir(out).string() +
                  "; run `pretrain-fusion` with fusion.save_every > 0 first");
  std::sort(ckpts.begin(), ckpts.end());

  const auto subjects = stored_subjects(out);
  const auto fold = fold_for(cfg, subjects);
  const int k = static_cast<int>(cfg.integer("knn.k"));
  const long pca_dims = cfg.integer("knn.pca_dims");

  std::vector<SubjectFrames> train_subs, test_subs;
  std::vector<double> xs, ys;
  for (const auto& path : ckpts) {
    auto bundle = load_fusion(path);
    if (train_subs.empty()) {
      train_subs = collect_frames_for(out, fold.train_subjects,
                                      bundle.channels, bundle.frame_size_s,
                                      bundle.overlap);
      test_subs = collect_frames_for(out, fold.test_subjects, bundle.channels,
                                     bundle.frame_size_s, bundle.overlap);
    }
    const auto f_train = features_for(bundle.model, train_subs);
    const auto f_test = features_for(bundle.model, test_subs);
    Eigen::MatrixXd xtr(f_train.x.rows(), f_train.x.cols());
    Eigen::MatrixXd xte(f_test.x.rows(), f_test.x.cols());
    std::vector<int> ytr, yte;
    long r = 0;
    for (long i = 0; i < f_train.x.rows(); ++i)
      if (f_train.stage[static_cast<size_t>(i)] >= 0) {
        xtr.row(r++) = f_train.x.row(i);
        ytr.push_back(f_train.stage[static_cast<size_t>(i)]);
      }
    xtr.conservativeResize(r, Eigen::NoChange);
    r = 0;
    for (long i = 0; i < f_test.x.rows(); ++i)
      if (f_test.stage[static_cast<size_t>(i)] >= 0) {
        xte.row(r++) = f_test.x.row(i);
        yte.push_back(f_test.stage[static_cast<size_t>(i)]);
      }
    xte.conservativeResize(r, Eigen::NoChange);
    if (ytr.empty() || yte.empty())
      throw_invalid("knn-probe needs scored epochs on both splits");

    const int epoch = nn::read_checkpoint_meta(path).at("epoch").get<int>();
    const double acc = eval::knn_probe_accuracy(xtr, ytr, xte, yte, k, pca_dims);
    xs.push_back(epoch);
    ys.push_back(acc);
    SOMNUS_INFO("knn-probe epoch " << epoch << ": accuracy " << acc);
  }

  fs::create_directories(results_dir(out));
  const fs::path csv_path = results_dir(out) / "knn_probe.csv";
  std::ofstream csv(csv_path);
  if (!csv) throw_io("cannot write " + csv_path.string());
  csv << "epoch,accuracy\n";
  for (size_t i = 0; i < xs.size(); ++i)
    csv << static_cast<long>(xs[i]) << ',' << fmt(ys[i]) << "\n";

  plot::Series s{"stage kNN accuracy", xs, ys, "#1f6fb2"};
  const std::string svg = plot::line_chart_svg(
      "kNN probe over pretraining", "pretraining epoch", "accuracy", {s});
  std::ofstream svgf(results_dir(out) / "knn_probe.svg");
  if (!svgf) throw_io("cannot write knn_probe.svg");
  svgf << svg;
  std::cout << "knn-probe: " << xs.size() << " checkpoints -> "
            << csv_path.string() << "\n";
}

void cmd_hypnogram(RunConfig& cfg) {
  const fs::path out = cfg.out_dir();
  cfg.write_resolved(out);
  const int scenario = static_cast<int>(cfg.integer("hypnogram.scenario"));
  const std::string label = scenario_labels(scenario).back();
  const fs::path pred_path =
      results_dir(out) /
      ("predictions_s" + scenario_file_tag(label) + "_stage.csv");
  require_artifact(pred_path, "stage predictions for scenario " + label,
                   "train");
  const auto rows = read_csv(pred_path);
  if (rows.empty() || rows[0] != split_csv_line("subject,epoch,truth,pred"))
    throw_corrupt("unexpected predictions header in " + pred_path.string());

  std::string subject = cfg.text("hypnogram.subject");
  if (subject.empty()) {
    if (rows.size() < 2)
      throw_corrupt("no prediction rows in " + pred_path.string());
    subject = rows[1][0];
  }
  std::vector<std::pair<int, std::pair<int, int>>> picked;
  for (size_t i = 1; i < rows.size(); ++i) {
    if (rows[i].size() != 4)
      throw_corrupt("malformed predictions row in " + pred_path.string());
    if (rows[i][0] != subject) continue;
    picked.push_back({parse_int(rows[i][1], pred_path),
                      {parse_int(rows[i][2], pred_path),
                       parse_int(rows[i][3], pred_path)}});
  }
  if (picked.empty())
    throw_invalid("no predictions for subject " + subject + " in " +
                  pred_path.string());
  std::sort(picked.begin(), picked.end());
  std::vector<int> truth, pred;
  for (const auto& [e, tp] : picked) {
    truth.push_back(tp.first);
    pred.push_back(tp.second);
  }

  const auto h = eval::hypnogram_data(truth, pred);
  fs::create_directories(results_dir(out));
  const fs::path svg_path = results_dir(out) / ("hypnogram_" + subject + ".svg");
  std::ofstream svgf(svg_path);
  if (!svgf) throw_io("cannot write " + svg_path.string());
  svgf << eval::hypnogram_svg(subject, h);
  std::ofstream txtf(results_dir(out) / ("hypnogram_" + subject + ".txt"));
  if (!txtf) throw_io("cannot write hypnogram text for " + subject);
  txtf << eval::hypnogram_text(subject, h);
  std::cout << "hypnogram: subject " << subject << ", " << truth.size()
            << " epochs, " << h.mismatches.size() << " disagreements -> "
            << svg_path.string() << "\n";
}

void cmd_plot_losses(RunConfig& cfg) {
  const fs::path out = cfg.out_dir();
  cfg.write_resolved(out);
  const std::string name = cfg.text("plot.log");
  const fs::path log_path = logs_dir(out) / (name + ".csv");
  require_artifact(log_path, "training log '" + name + "'",
                   "pretrain-backbone or pretrain-fusion");
  const auto rows = read_csv(log_path);
  if (rows.empty() || rows[0] != split_csv_line("step,recon,contra,total,lr"))
    throw_corrupt("unexpected training log header in " + log_path.string());
  if (rows.size() < 2)
    throw_corrupt("training log " + log_path.string() + " has no steps");

  plot::Series recon{"recon", {}, {}, "#1f6fb2"};
  plot::Series contra{"contrastive", {}, {}, "#e69f00"};
  plot::Series total{"total", {}, {}, "#444444"};
  for (size_t i = 1; i < rows.size(); ++i) {
    if (rows[i].size() != 5)
      throw_corrupt("malformed training log row in " + log_path.string());
    const double step = parse_number(rows[i][0], log_path);
    recon.x.push_back(step);
    recon.y.push_back(parse_number(rows[i][1], log_path));
    contra.x.push_back(step);
    contra.y.push_back(parse_number(rows[i][2], log_path));
    total.x.push_back(step);
    total.y.push_back(parse_number(rows[i][3], log_path));
  }
  const std::string svg =
      plot::line_chart_svg("pretraining losses (" + name + ")", "step", "loss",
                           {recon, contra, total});
  fs::create_directories(results_dir(out));
  const fs::path svg_path = results_dir(out) / ("losses_" + name + ".svg");
  std::ofstream svgf(svg_path);
  if (!svgf) throw_io("cannot write " + svg_path.string());
  svgf << svg;
  std::cout << "plot-losses: " << (rows.size() - 1) << " steps -> "
            << svg_path.string() << "\n";
}

}  // namespace

std::vector<std::string> command_names() {
  return {"gen-synth",       "preprocess", "pretrain-backbone",
          "pretrain-fusion", "train",      "evaluate",
          "knn-probe",       "hypnogram",  "plot-losses"};
}

void run_command(RunConfig& cfg, const std::string& command) {
  if (command == "gen-synth") return cmd_gen_synth(cfg);
  if (command == "preprocess") return cmd_preprocess(cfg);
  if (command == "pretrain-backbone") return cmd_pretrain_backbone(cfg);
  if (command == "pretrain-fusion") return cmd_pretrain_fusion(cfg);
  if (command == "train") return cmd_train(cfg);
  if (command == "evaluate") return cmd_evaluate(cfg);
  if (command == "knn-probe") return cmd_knn_probe(cfg);
  if (command == "hypnogram") return cmd_hypnogram(cfg);
  if (command == "plot-losses") return cmd_plot_losses(cfg);
  throw_invalid("unknown command '" + command + "'");
}

}  // namespace somnus::run
