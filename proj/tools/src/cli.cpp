#include "vhash/cli.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include "vhash/bench.hpp"
#include "vhash/checkpoint.hpp"
#include "vhash/error.hpp"
#include "vhash/hashing.hpp"
#include "vhash/index.hpp"
#include "vhash/ingest.hpp"
#include "vhash/model.hpp"
#include "vhash/train.hpp"

namespace vhash::cli {
namespace fs = std::filesystem;
namespace {

std::ofstream open_out(const fs::path& path) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorCode::kIo, "cannot write " + path.string());
  return out;
}

void write_meta(const fs::path& artifact, std::uint64_t seed) {
  auto out = open_out(fs::path(artifact.string() + ".meta"));
  out << "seed=" << seed << '\n';
}

std::vector<FeatureSequence> load_features(const std::vector<std::string>& paths) {
  std::vector<FeatureSequence> out;
  for (const auto& p : paths) out.push_back(load_feat(p));
  return out;
}

// Features are kept at half the 25 fps rate.
double feature_duration(const FeatureSequence& seq) { return 2.0 * static_cast<double>(seq.frame_count()) / kTargetFps; }

int dct_block_for(Eigen::Index dim) {
  const auto block = static_cast<int>(std::llround(std::sqrt(static_cast<double>(dim))));
  if (static_cast<Eigen::Index>(block) * block != dim) {
    throw Error(ErrorCode::kDimensionMismatch, "feature dimension " + std::to_string(dim) + " is not a square");
  }
  return block;
}

std::vector<CopySpec> read_copies(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::kIo, "cannot read " + path.string());
  std::vector<CopySpec> out;
  std::string line;
  std::getline(in, line);
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::istringstream row(line);
    CopySpec c;
    std::string cell;
    std::getline(row, c.source_id, ',');
    double* fields[] = {&c.slide, &c.start, &c.duration, &c.source_duration};
    for (double* f : fields) {
      if (!std::getline(row, cell, ',')) throw Error(ErrorCode::kTruncatedFile, "short row in " + path.string());
      *f = std::stod(cell);
    }
    out.push_back(std::move(c));
  }
  return out;
}

void write_copies(std::ostream& out, const std::vector<CopySpec>& copies) {
  out << "source_id,slide,start,duration,source_duration\n";
  for (const auto& c : copies) {
    out << c.source_id << ',' << c.slide << ',' << c.start << ',' << c.duration << ',' << c.source_duration << '\n';
  }
}

std::array<Eigen::Index, kStackDepth> parse_dims(const std::vector<Eigen::Index>& hidden, Eigen::Index bits) {
  if (hidden.size() != kStackDepth - 1) throw CLI::ValidationError("--hidden", "expects three sizes");
  for (auto h : hidden) {
    if (h < 1) throw CLI::ValidationError("--hidden", "sizes must be positive");
  }
  if (bits < 1) throw CLI::ValidationError("--L", "must be positive");
  return {hidden[0], hidden[1], hidden[2], bits};
}

struct Options {
  std::uint64_t seed = 0;
  std::string out, out_dir, stats, model, loss_log, db, hash_file, copies, mode = "events";
  std::vector<std::string> inputs;
  int count = 20, min_seconds = 20, max_seconds = 60, fps = kTargetFps, block = kDefaultDctBlock;
  int epochs = 10, th = 16, checkpoint_every = 0;
  std::size_t batch = 32, topk = 10;
  double lr = 1e-3, ts = 4.0, bn_eps = kDefaultBnEps, gamma_init = ModelConfig{}.gamma_init, clip = TrainConfig{}.clip_norm;
  Eigen::Index bits = 64;
  std::vector<Eigen::Index> hidden{256, 256, 64};
};

EventDetectConfig detect_config(const Options& o) {
  EventDetectConfig cfg;
  cfg.threshold = o.th;
  return cfg;
}

int cmd_synth(const Options& o, std::ostream& out, std::ostream& err) {
  const fs::path dir = o.out_dir;
  fs::create_directories(dir);
  std::vector<CopySpec> copies;
  for (const auto& v : synth_corpus_plan(o.seed, o.count, o.min_seconds, o.max_seconds)) {
    err << "synth " << v.id << " (" << v.duration_seconds << " s)\n";
    save_fseq(synth_video(v.seed, v.duration_seconds, o.fps), dir / (v.id + ".fseq"));
    auto c = make_copies(v.duration_seconds, 4.0, 2.0, v.id);
    copies.insert(copies.end(), c.begin(), c.end());
    out << (dir / (v.id + ".fseq")).string() << '\n';
  }
  auto csv = open_out(dir / "copies.csv");
  write_copies(csv, copies);
  write_meta(dir / "corpus", o.seed);
  return kExitOk;
}

int cmd_ingest(const Options& o, std::ostream& out, std::ostream& err) {
  for (const auto& p : o.inputs) {
    const fs::path src(p);
    const std::string id = src.stem().string();
    err << "ingest " << id << '\n';
    const fs::path dst = fs::path(o.out_dir) / (id + ".feat");
    if (dst.has_parent_path()) fs::create_directories(dst.parent_path());
    save_feat(extract_features(load_fseq(src), id, o.block), dst);
    out << dst.string() << '\n';
  }
  return kExitOk;
}

int cmd_stats(const Options& o, std::ostream&, std::ostream&) {
  const auto feats = load_features(o.inputs);
  save_nrm(compute_norm_stats(feats), o.out);
  return kExitOk;
}

int cmd_train(const Options& o, std::ostream& out, std::ostream& err) {
  const NormStats stats = load_nrm(o.stats);
  std::vector<FeatureSequence> set;
  for (const auto& f : load_features(o.inputs)) set.push_back(normalize(f, stats));
  ModelConfig mcfg;
  mcfg.feature_dim = stats.dim();
  mcfg.encoder_dims = parse_dims(o.hidden, o.bits);
  mcfg.bn_eps = o.bn_eps;
  mcfg.gamma_init = o.gamma_init;
  Model model(mcfg, o.seed);
  TrainConfig tcfg;
  tcfg.batch_size = o.batch;
  tcfg.epochs = o.epochs;
  tcfg.lr = o.lr;
  tcfg.memory_threshold = o.th;
  tcfg.clip_norm = o.clip;
  tcfg.seed = o.seed;
  tcfg.checkpoint_every = o.checkpoint_every;
  tcfg.checkpoint_path = o.out;
  const auto log = train(set, tcfg, model, [&](int epoch, const LossBreakdown& l, const Model&) {
    char buf[160];
    std::snprintf(buf, sizeof buf, "epoch %d recon %.6f memory %.6f diversity %.6f total %.6f\n", epoch, l.recon,
                  l.memory, l.diversity, l.total);
    err << buf;
  });
  save_checkpoint(model, o.out);
  write_meta(o.out, o.seed);
  if (!o.loss_log.empty()) {
    auto csv = open_out(o.loss_log);
    write_loss_log(csv, log);
  }
  out << o.out << '\n';
  return kExitOk;
}

int cmd_hash(const Options& o, std::ostream& out, std::ostream&) {
  const Model model = load_checkpoint(o.model);
  const NormStats stats = load_nrm(o.stats);
  const HashMode mode = parse_hash_mode(o.mode);
  for (const auto& f : load_features(o.inputs)) {
    const auto seq = normalize(f, stats);
    const auto vh = hash_video(encode_frozen(model, seq.features), mode, detect_config(o), o.ts, f.video_id,
                               feature_duration(f));
    const fs::path dst = fs::path(o.out_dir) / (f.video_id + ".vh");
    auto file = open_out(dst);
    write_video_hash(file, vh);
    out << dst.string() << '\n';
  }
  return kExitOk;
}

VideoHash load_hash(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::kIo, "cannot read " + path.string());
  return read_video_hash(in);
}

int cmd_db_build(const Options& o, std::ostream& out, std::ostream&) {
  std::vector<VideoHash> hashes;
  for (const auto& p : o.inputs) hashes.push_back(load_hash(p));
  if (hashes.empty()) throw CLI::ValidationError("--hash", "at least one hash is required");
  HashDatabase db(hashes.front().bits, parse_hash_mode(o.mode));
  for (const auto& vh : hashes) db.add(vh);
  db_save(db, o.out);
  out << db.size() << '\n';
  return kExitOk;
}

int cmd_db_add(const Options& o, std::ostream& out, std::ostream&) {
  HashDatabase db = db_load(o.db);
  for (const auto& p : o.inputs) db.add(load_hash(p));
  db_save(db, o.out);
  out << db.size() << '\n';
  return kExitOk;
}

int cmd_query(const Options& o, std::ostream& out, std::ostream&) {
  const HashDatabase db = db_load(o.db);
  for (const Match& m : query_topk(db, load_hash(o.hash_file), o.topk)) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.3f", m.distance);
    out << m.video_id << ' ' << buf << '\n';
  }
  return kExitOk;
}

int cmd_eval(const Options& o, std::ostream& out, std::ostream& err) {
  const Model model = load_checkpoint(o.model);
  const NormStats stats = load_nrm(o.stats);
  const int block = dct_block_for(model.config.feature_dim);
  std::vector<EvalVideo> videos;
  std::vector<CopySpec> copies;
  for (const auto& p : o.inputs) {
    const fs::path src(p);
    err << "eval features " << src.stem().string() << '\n';
    const FrameSequence seq = resample_to_25fps(load_fseq(src));
    videos.push_back({src.stem().string(), frame_features(seq, block), seq.duration_seconds()});
    if (o.copies.empty()) {
      auto c = make_copies(std::floor(seq.duration_seconds()), 4.0, 2.0, videos.back().id);
      copies.insert(copies.end(), c.begin(), c.end());
    }
  }
  if (!o.copies.empty()) copies = read_copies(o.copies);
  EvalConfig cfg;
  cfg.sample_seconds = o.ts;
  cfg.k_max = o.topk;
  cfg.detect = detect_config(o);
  err << "eval " << copies.size() << " copies\n";
  const EvalReport report = run_eval(videos, copies, model, stats, cfg);
  const fs::path dir = o.out_dir;
  for (bool restricted : {false, true}) {
    const std::string suffix = restricted ? "_slide2mod4.csv" : ".csv";
    auto topk = open_out(dir / ("topk" + suffix));
    write_topk_csv(topk, report, restricted);
    auto buckets = open_out(dir / ("buckets" + suffix));
    write_bucket_csv(buckets, report, restricted);
    out << (dir / ("topk" + suffix)).string() << '\n' << (dir / ("buckets" + suffix)).string() << '\n';
  }
  return kExitOk;
}

int cmd_dseries(const Options& o, std::ostream& out, std::ostream&) {
  const Model model = load_checkpoint(o.model);
  const NormStats stats = load_nrm(o.stats);
  const auto seq = normalize(load_feat(o.inputs.front()), stats);
  const auto encoded = encode_frozen(model, seq.features);
  if (o.out.empty()) {
    emit_d_series(out, encoded, detect_config(o));
  } else {
    auto csv = open_out(o.out);
    emit_d_series(csv, encoded, detect_config(o));
  }
  return kExitOk;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Event-based video hashing and copy detection", "vhash"};
  app.require_subcommand(1, 1);
  Options o;
  const auto seed_flag = [&](CLI::App* c) { c->add_option("--seed", o.seed, "random seed")->capture_default_str(); };
  const auto th_flag = [&](CLI::App* c) {
    c->add_option("--th", o.th, "event threshold on d_t")->capture_default_str()->check(CLI::NonNegativeNumber);
  };
  const auto model_flags = [&](CLI::App* c) {
    c->add_option("--model", o.model, "MCBN checkpoint")->required();
    c->add_option("--stats", o.stats, "NRM1 normalization statistics")->required();
  };

  auto* synth = app.add_subcommand("synth", "generate a synthetic FSEQ corpus and copy specs");
  seed_flag(synth);
  synth->add_option("--out-dir", o.out_dir, "output directory")->required();
  synth->add_option("--count", o.count, "number of videos")->capture_default_str()->check(CLI::PositiveNumber);
  synth->add_option("--min-seconds", o.min_seconds)->capture_default_str();
  synth->add_option("--max-seconds", o.max_seconds)->capture_default_str();
  synth->add_option("--fps", o.fps)->capture_default_str()->check(CLI::PositiveNumber);

  auto* ingest = app.add_subcommand("ingest", "FSEQ -> FEAT");
  ingest->add_option("--in", o.inputs, "FSEQ files")->required();
  ingest->add_option("--out-dir", o.out_dir, "output directory")->required();
  ingest->add_option("--block", o.block, "DCT block side")->capture_default_str()->check(CLI::Range(1, kFrameSide));

  auto* stats = app.add_subcommand("stats", "FEAT list -> NRM1");
  stats->add_option("--feat", o.inputs, "FEAT files")->required();
  stats->add_option("--out", o.out, "NRM1 output")->required();

  auto* trainc = app.add_subcommand("train", "FEAT list + NRM1 -> MCBN");
  seed_flag(trainc);
  th_flag(trainc);
  trainc->add_option("--feat", o.inputs, "FEAT files")->required();
  trainc->add_option("--stats", o.stats, "NRM1 statistics")->required();
  trainc->add_option("--out", o.out, "MCBN output")->required();
  trainc->add_option("--loss-log", o.loss_log, "per-epoch loss CSV");
  trainc->add_option("--epochs", o.epochs)->capture_default_str()->check(CLI::PositiveNumber);
  trainc->add_option("--batch", o.batch)->capture_default_str()->check(CLI::Range(2, 1 << 20));
  trainc->add_option("--lr", o.lr)->capture_default_str()->check(CLI::PositiveNumber);
  trainc->add_option("--L", o.bits, "hash bits")->capture_default_str();
  trainc->add_option("--hidden", o.hidden, "encoder layer 1-3 sizes")->delimiter(',')->expected(3)->capture_default_str();
  trainc->add_option("--bn-eps", o.bn_eps, "batch-norm epsilon")->capture_default_str()->check(CLI::PositiveNumber);
  trainc->add_option("--gamma-init", o.gamma_init, "initial batch-norm scale")
      ->capture_default_str()
      ->check(CLI::PositiveNumber);
  trainc->add_option("--clip", o.clip, "gradient norm clip, 0 disables")->capture_default_str()->check(CLI::NonNegativeNumber);
  trainc->add_option("--checkpoint-every", o.checkpoint_every)->capture_default_str()->check(CLI::NonNegativeNumber);

  auto* hash = app.add_subcommand("hash", "MCBN + FEAT -> video hash");
  model_flags(hash);
  th_flag(hash);
  hash->add_option("--feat", o.inputs, "FEAT files")->required();
  hash->add_option("--out-dir", o.out_dir, "output directory")->required();
  hash->add_option("--mode", o.mode)->capture_default_str()->check(CLI::IsMember({"events", "sample", "sample_and_events"}));
  hash->add_option("--ts", o.ts, "sampling interval in seconds")->capture_default_str()->check(CLI::PositiveNumber);

  auto* build = app.add_subcommand("db-build", "video hashes -> VHDB");
  build->add_option("--hash", o.inputs, "hash files")->required();
  build->add_option("--out", o.out, "VHDB output")->required();
  build->add_option("--mode", o.mode)->capture_default_str()->check(CLI::IsMember({"events", "sample", "sample_and_events"}));

  auto* add = app.add_subcommand("db-add", "append video hashes to a VHDB");
  add->add_option("--db", o.db, "existing VHDB")->required();
  add->add_option("--hash", o.inputs, "hash files")->required();
  add->add_option("--out", o.out, "VHDB output")->required();

  auto* query = app.add_subcommand("query", "rank database videos against one hash");
  query->add_option("--db", o.db, "VHDB")->required();
  query->add_option("--hash", o.hash_file, "query hash")->required();
  query->add_option("--topk", o.topk)->capture_default_str()->check(CLI::PositiveNumber);

  auto* eval = app.add_subcommand("eval", "copy-detection benchmark report");
  model_flags(eval);
  th_flag(eval);
  eval->add_option("--fseq", o.inputs, "database FSEQ files")->required();
  eval->add_option("--copies", o.copies, "copy spec CSV (default: every copy of every video)");
  eval->add_option("--out-dir", o.out_dir, "report directory")->required();
  eval->add_option("--ts", o.ts)->capture_default_str()->check(CLI::PositiveNumber);
  eval->add_option("--topk", o.topk)->capture_default_str()->check(CLI::PositiveNumber);

  auto* dseries = app.add_subcommand("dseries", "adjacent Hamming distance CSV");
  model_flags(dseries);
  th_flag(dseries);
  dseries->add_option("--feat", o.inputs, "FEAT file")->required()->expected(1);
  dseries->add_option("--out", o.out, "CSV output (default stdout)");

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitUsage;
  }

  try {
    const auto* sub = app.get_subcommands().front();
    const std::string name = sub->get_name();
    if (name == "synth") return cmd_synth(o, out, err);
    if (name == "ingest") return cmd_ingest(o, out, err);
    if (name == "stats") return cmd_stats(o, out, err);
    if (name == "train") return cmd_train(o, out, err);
    if (name == "hash") return cmd_hash(o, out, err);
    if (name == "db-build") return cmd_db_build(o, out, err);
    if (name == "db-add") return cmd_db_add(o, out, err);
    if (name == "query") return cmd_query(o, out, err);
    if (name == "eval") return cmd_eval(o, out, err);
    return cmd_dseries(o, out, err);
  } catch (const CLI::ValidationError& e) {
    err << "error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const Error& e) {
    err << "error: " << to_string(e.code()) << ": " << e.what() << '\n';
    return kExitData;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kExitData;
  }
}

int run(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return run(args, std::cout, std::cerr);
}

}  // namespace vhash::cli
