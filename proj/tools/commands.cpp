#include "commands.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>

#include "sca/attention.hpp"
#include "sca/dataset.hpp"
#include "sca/decoder.hpp"
#include "sca/errors.hpp"
#include "sca/metrics.hpp"
#include "sca/synthetic.hpp"
#include "sca/training.hpp"

#ifndef SCA_VERSION
#define SCA_VERSION "dev"
#endif

namespace sca::cli {

namespace fs = std::filesystem;

namespace {

// Signals a bad flag value or path that CLI11 could not catch.
struct UsageFailure : std::runtime_error {
  using std::runtime_error::runtime_error;
};

std::string fmt(const char* format, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, format, v);
  return buf;
}

std::string join(const std::vector<std::string>& words) {
  std::string out;
  for (const auto& w : words) {
    if (!out.empty()) out += ' ';
    out += w;
  }
  return out;
}

fs::path vocab_path(const fs::path& ckpt) { return fs::path(ckpt.string() + ".vocab"); }

// ---------------------------------------------------------------- gen-data

struct GenDataOptions {
  std::size_t n = 0;
  std::uint64_t seed = 0;
  std::string out_dir;
  bool force = false;
};

int gen_data(const GenDataOptions& o, std::ostream& out) {
  const fs::path dir(o.out_dir);
  if (fs::exists(dir) && !fs::is_directory(dir)) {
    throw UsageFailure(o.out_dir + " exists and is not a directory");
  }
  if (fs::exists(dir) && !fs::is_empty(dir)) {
    if (!o.force) {
      throw UsageFailure(o.out_dir + " is not empty (use --force to overwrite)");
    }
    fs::remove_all(dir);
  }
  const auto records = generate_dataset(o.n, o.seed, dir);
  out << "wrote " << records.size() << " records to " << (dir / kDatasetFile).string()
      << "\n";
  return kOk;
}

// ------------------------------------------------------------------- train

struct TrainOptions {
  std::string data;
  std::string order = "cs";
  std::size_t layers = 1;
  std::string warm_start;
  std::uint64_t seed = 1;
  std::size_t epochs = 30;
  std::string out;
  std::size_t batch = 16;
  double dropout = 0.5;
  std::size_t patience = 5;
  std::size_t embed = 16, hidden = 48, visual = 32, attention = 24;
  bool no_rescale = false;
  std::string encoder = "tiny";
};

std::string iso_time_now() {
  const std::time_t now = std::chrono::system_clock::to_time_t(
      std::chrono::system_clock::now());
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", std::gmtime(&now));
  return buf;
}

nlohmann::json manifest_json(const TrainOptions& o, const ModelConfig& mc,
                             const TrainConfig& tc) {
  nlohmann::json j;
  j["version"] = SCA_VERSION;
  j["start_time"] = iso_time_now();
  j["seed"] = tc.seed;
  j["data"] = o.data;
  j["out"] = o.out;
  j["warm_start"] = o.warm_start;
  j["model"] = {{"order", to_string(mc.order)},
                {"attentive_layers", mc.attentive_layers},
                {"rescale", mc.modulation.rescale},
                {"embed", mc.dims.embed},
                {"hidden", mc.dims.hidden},
                {"visual", mc.dims.visual},
                {"attention", mc.dims.attention},
                {"vocab_size", mc.vocab_size},
                {"encoder", o.encoder},
                {"coordinate_planes", mc.encoder.coordinate_planes}};
  nlohmann::json layers = nlohmann::json::array();
  for (const auto& l : mc.encoder.layers) {
    layers.push_back({{"in", l.in_channels},
                      {"out", l.out_channels},
                      {"kernel", l.kernel},
                      {"nonlinearity", to_string(l.nonlinearity)},
                      {"pool", l.pool}});
  }
  j["model"]["encoder_layers"] = layers;
  j["model"]["input_shape"] = mc.encoder.input_shape;
  j["training"] = {{"batch_size", tc.batch_size}, {"dropout", tc.dropout},
                   {"patience", tc.patience},     {"max_epochs", tc.max_epochs},
                   {"threads", tc.threads},       {"optimizer", "adadelta"},
                   {"rho", 0.95},                 {"epsilon", 1e-6},
                   {"init_range", 0.08}};
  return j;
}

int train_command(const TrainOptions& o, std::ostream& out, std::ostream& err) {
  const Dataset data = load_dataset(o.data);
  const auto train_set = data.examples("train");
  const auto val_set = data.examples("val");
  if (train_set.empty() || val_set.empty()) {
    throw UsageFailure(o.data + " needs nonempty train and val splits");
  }

  ModelConfig mc;
  if (o.encoder == "tiny") {
    mc.encoder = EncoderConfig::tiny_default();
    mc.encoder.input_shape = train_set.front().image.shape();
  } else {
    const Shape& s = train_set.front().image.shape();
    mc.encoder = EncoderConfig::feature_injection(s[0], s[1], s[2]);
  }
  mc.order = parse_attention_order(o.order);
  mc.modulation.rescale = !o.no_rescale;
  mc.attentive_layers = o.layers;
  mc.dims = DecoderDims{o.embed, o.hidden, o.visual, o.attention};
  mc.vocab_size = data.vocabulary.size();

  TrainConfig tc;
  tc.batch_size = o.batch;
  tc.dropout = o.dropout;
  tc.patience = o.patience;
  tc.max_epochs = o.epochs;
  tc.seed = o.seed;
  tc.threads = threads_from_env();
  tc.validate();

  CaptionModel model = CaptionModel::initialize(mc, o.seed);
  if (!o.warm_start.empty()) {
    if (!fs::exists(o.warm_start)) throw UsageFailure("no checkpoint at " + o.warm_start);
    const auto fresh = warm_start(model, CaptionModel::load(o.warm_start));
    if (!fresh.empty()) {
      err << "warning: " << fresh.size()
          << " tensors not in the warm-start checkpoint, initialized fresh:";
      for (const auto& name : fresh) err << ' ' << name;
      err << "\n";
    }
  }

  const fs::path ckpt(o.out);
  if (ckpt.has_parent_path()) fs::create_directories(ckpt.parent_path());
  {
    std::ofstream manifest(o.out + ".manifest.json", std::ios::trunc);
    if (!manifest) throw UsageFailure("cannot write next to " + o.out);
    manifest << manifest_json(o, mc, tc).dump(2) << "\n";
  }

  std::ofstream history(o.out + ".history.csv", std::ios::binary | std::ios::trunc);
  history << "epoch,train_loss,val_loss\n";
  char line[128];
  TrainResult result = train(model, train_set, val_set, tc, [&](const EpochRecord& r) {
    std::snprintf(line, sizeof line, "%zu,%.17g,%.17g\n", r.epoch, r.train_loss,
                  r.val_loss);
    history << line << std::flush;
    std::snprintf(line, sizeof line, "epoch %zu train %.4f val %.4f\n", r.epoch,
                  r.train_loss, r.val_loss);
    err << line << std::flush;
  });
  result.model.save(ckpt);
  data.vocabulary.save(vocab_path(ckpt));
  out << "best epoch " << result.best_epoch << " of " << result.history.size()
      << (result.stopped_early ? " (early stop)" : "") << "; checkpoint "
      << ckpt.string() << "\n";
  return kOk;
}

// ----------------------------------------------------------------- caption

struct CaptionOptions {
  std::string ckpt;
  std::string input;
  std::size_t beam = 5;
  std::size_t max_len = 16;
  std::string dump_attn;
  std::string split;
};

struct NamedImage {
  std::string id;
  Tensor image;
  std::vector<std::string> reference;
};

std::vector<NamedImage> load_inputs(const std::string& input,
                                    const std::string& split) {
  const fs::path p(input);
  if (!fs::exists(p)) throw UsageFailure("no input at " + input);
  std::vector<NamedImage> out;
  if (fs::is_regular_file(p) && p.extension() == ".scat") {
    out.push_back({p.stem().string(), load_feature_map(p), {}});
    return out;
  }
  const Dataset data = load_dataset(p);
  for (const auto& r : data.records) {
    if (!split.empty() && r.split != split) continue;
    out.push_back({std::to_string(r.id), load_feature_map(data.root / r.image),
                   r.caption});
  }
  return out;
}

CaptionModel load_model(const std::string& ckpt) {
  if (!fs::exists(ckpt)) throw UsageFailure("no checkpoint at " + ckpt);
  return CaptionModel::load(ckpt);
}

Vocabulary load_vocab(const std::string& ckpt) {
  const fs::path p = vocab_path(ckpt);
  if (!fs::exists(p)) throw UsageFailure("no vocabulary at " + p.string());
  return Vocabulary::load(p);
}

void write_attention_dump(const fs::path& dir, const std::string& id,
                          const DecodedCaption& caption, const Vocabulary& vocab) {
  char num[32];
  for (std::size_t t = 0; t < caption.emitted.size(); ++t) {
    const fs::path file = dir / (id + "_t" + std::to_string(t) + ".txt");
    std::ofstream f(file, std::ios::trunc);
    if (!f) throw UsageFailure("cannot write " + file.string());
    for (const auto& w : caption.attention[t]) {
      f << "t=" << t << " layer=" << w.layer << " word=" << vocab.word(caption.emitted[t])
        << "\n";
      f << "alpha " << w.width << " " << w.height << "\n";
      for (std::size_t h = 0; h < w.height; ++h) {
        for (std::size_t x = 0; x < w.width; ++x) {
          std::snprintf(num, sizeof num, "%.17g", w.alpha[h * w.width + x]);
          f << (x ? " " : "") << num;
        }
        f << "\n";
      }
      f << "beta " << w.beta.size() << "\n";
      for (std::size_t c = 0; c < w.beta.size(); ++c) {
        std::snprintf(num, sizeof num, "%.17g", w.beta[c]);
        f << (c ? " " : "") << num;
      }
      f << "\n";
    }
  }
}

int caption_command(const CaptionOptions& o, std::ostream& out) {
  const CaptionModel model = load_model(o.ckpt);
  const Vocabulary vocab = load_vocab(o.ckpt);
  const auto inputs = load_inputs(o.input, o.split);
  if (!o.dump_attn.empty()) fs::create_directories(o.dump_attn);
  DecodeOptions options{DecodeMode::Beam, o.beam, o.max_len};
  for (const auto& in : inputs) {
    const DecodedCaption c = decode_caption(model, in.image, options);
    out << in.id << '\t' << join(vocab.decode(c.tokens)) << '\n';
    if (!o.dump_attn.empty()) write_attention_dump(o.dump_attn, in.id, c, vocab);
  }
  return kOk;
}

// -------------------------------------------------------------------- eval

struct EvalOptions {
  std::string ckpt;
  std::string captions;  // "<id>\t<tokens>" lines, as printed by caption
  std::string data;
  std::string split = "test";
  std::size_t beam = 5;
  std::size_t max_len = 16;
};

std::map<std::string, std::vector<std::string>> read_captions(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw UsageFailure("cannot open " + path);
  std::map<std::string, std::vector<std::string>> out;
  std::string line;
  while (std::getline(in, line)) {
    const auto tab = line.find('\t');
    if (tab == std::string::npos) throw UsageFailure(path + ": expected <id>\\t<tokens>");
    std::istringstream words(line.substr(tab + 1));
    auto& caption = out[line.substr(0, tab)];
    for (std::string w; words >> w;) caption.push_back(w);
  }
  return out;
}

int eval_command(const EvalOptions& o, std::ostream& out) {
  if (o.ckpt.empty() == o.captions.empty()) {
    throw UsageFailure("eval needs exactly one of --ckpt or --captions");
  }
  const auto inputs = load_inputs(o.data, o.split);
  if (inputs.empty()) throw UsageFailure("split '" + o.split + "' is empty");
  std::vector<EvalPair> corpus;
  if (!o.captions.empty()) {
    const auto given = read_captions(o.captions);
    for (const auto& in : inputs) {
      const auto it = given.find(in.id);
      if (it == given.end()) throw UsageFailure("no caption for id " + in.id);
      corpus.push_back({it->second, {in.reference}});
    }
  } else {
    const CaptionModel model = load_model(o.ckpt);
    const Vocabulary vocab = load_vocab(o.ckpt);
    DecodeOptions options{DecodeMode::Beam, o.beam, o.max_len};
    for (const auto& in : inputs) {
      const DecodedCaption c = decode_caption(model, in.image, options);
      corpus.push_back({vocab.decode(c.tokens), {in.reference}});
    }
  }
  const auto b = bleu(corpus);
  for (std::size_t n = 0; n < 4; ++n) {
    out << "B@" << n + 1 << ' ' << fmt("%.4f", b[n]) << '\n';
  }
  out << "RG " << fmt("%.4f", rouge_l(corpus)) << '\n';
  return kOk;
}

// ----------------------------------------------------------------- memcost

struct MemcostOptions {
  std::int64_t w = 0, h = 0, c = 0, k = 0;
  bool compare = false;
};

int memcost_command(const MemcostOptions& o, std::ostream& out) {
  if (o.compare) {
    struct Geometry {
      const char* name;
      std::int64_t w, h, c;
    };
    const Geometry rows[] = {{"vgg-like", 14, 14, 512}, {"resnet-like", 7, 7, 2048}};
    const std::int64_t k = 512;
    out << "geometry     W  H     C    k       joint  spatial  channel  factored  "
           "ratio  dominant\n";
    for (const auto& g : rows) {
      const auto m = attention_memory_cost(g.w, g.h, g.c, k);
      char line[160];
      std::snprintf(line, sizeof line,
                    "%-11s %2lld %2lld %5lld %4lld %11llu %8llu %8llu %9llu %6.2f  %s\n",
                    g.name, static_cast<long long>(g.w), static_cast<long long>(g.h),
                    static_cast<long long>(g.c), static_cast<long long>(k),
                    static_cast<unsigned long long>(m.joint),
                    static_cast<unsigned long long>(m.factored_spatial),
                    static_cast<unsigned long long>(m.factored_channel),
                    static_cast<unsigned long long>(m.factored()), m.reduction(),
                    m.factored_channel > m.factored_spatial ? "channel" : "spatial");
      out << line;
    }
    return kOk;
  }
  const auto m = attention_memory_cost(o.w, o.h, o.c, o.k);
  out << "joint " << m.joint << '\n'
      << "spatial " << m.factored_spatial << '\n'
      << "channel " << m.factored_channel << '\n'
      << "factored " << m.factored() << '\n'
      << "ratio " << fmt("%.2f", m.reduction()) << '\n';
  return kOk;
}

// ------------------------------------------------------- inspect-attention

struct DumpBlock {
  std::string header;
  std::size_t width = 0, height = 0;
  std::vector<double> alpha, beta;
};

std::vector<DumpBlock> read_dump(const fs::path& file) {
  std::ifstream in(file);
  if (!in) throw UsageFailure("cannot open " + file.string());
  std::vector<DumpBlock> blocks;
  std::string line;
  auto fail = [&](const std::string& why) {
    throw FormatError(file.string() + ": " + why, 0);
  };
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    DumpBlock b;
    b.header = line;
    std::string tag;
    if (!(in >> tag >> b.width >> b.height) || tag != "alpha") fail("expected alpha W H");
    b.alpha.resize(b.width * b.height);
    for (auto& v : b.alpha) {
      if (!(in >> v)) fail("short alpha block");
    }
    std::size_t channels = 0;
    if (!(in >> tag >> channels) || tag != "beta") fail("expected beta C");
    b.beta.resize(channels);
    for (auto& v : b.beta) {
      if (!(in >> v)) fail("short beta block");
    }
    std::getline(in, line);
    blocks.push_back(std::move(b));
  }
  if (blocks.empty()) fail("no attention blocks");
  return blocks;
}

int inspect_command(const std::string& target, std::ostream& out) {
  const fs::path p(target);
  if (!fs::exists(p)) throw UsageFailure("no attention dump at " + target);
  std::vector<fs::path> files;
  if (fs::is_directory(p)) {
    for (const auto& e : fs::directory_iterator(p)) {
      if (e.is_regular_file() && e.path().extension() == ".txt") files.push_back(e.path());
    }
    std::sort(files.begin(), files.end());
  } else {
    files.push_back(p);
  }
  for (const auto& f : files) {
    for (const auto& b : read_dump(f)) {
      std::size_t peak = 0;
      double alpha_sum = 0.0;
      for (std::size_t i = 0; i < b.alpha.size(); ++i) {
        alpha_sum += b.alpha[i];
        if (b.alpha[i] > b.alpha[peak]) peak = i;
      }
      std::vector<std::size_t> top(b.beta.size());
      for (std::size_t i = 0; i < top.size(); ++i) top[i] = i;
      std::stable_sort(top.begin(), top.end(),
                       [&](std::size_t x, std::size_t y) { return b.beta[x] > b.beta[y]; });
      top.resize(std::min<std::size_t>(3, top.size()));
      out << f.filename().string() << ' ' << b.header << " peak=(" << peak % b.width
          << ',' << peak / b.width << ") alpha_max=" << fmt("%.4f", b.alpha[peak])
          << " alpha_sum=" << fmt("%.4f", alpha_sum) << " top_channels=";
      for (std::size_t i = 0; i < top.size(); ++i) {
        out << (i ? "," : "") << top[i] << ':' << fmt("%.3f", b.beta[top[i]]);
      }
      out << '\n';
    }
  }
  return kOk;
}

}  // namespace

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Spatial and channel-wise attention captioner"};
  app.require_subcommand(1);
  app.set_version_flag("--version", SCA_VERSION);

  GenDataOptions gen;
  auto* gen_cmd = app.add_subcommand("gen-data", "Generate a synthetic scene dataset");
  gen_cmd->add_option("--n", gen.n, "Number of scenes")->required()->check(CLI::PositiveNumber);
  gen_cmd->add_option("--seed", gen.seed, "Generator seed")->required();
  gen_cmd->add_option("--out-dir", gen.out_dir, "Output directory")->required();
  gen_cmd->add_flag("--force", gen.force, "Overwrite a non-empty directory");

  TrainOptions tr;
  auto* train_cmd = app.add_subcommand("train", "Train a captioning model");
  train_cmd->add_option("--data", tr.data, "Dataset directory or JSONL")->required();
  train_cmd->add_option("--order", tr.order, "Attention order")
      ->check(CLI::IsMember({"cs", "sc", "s", "c"}))
      ->capture_default_str();
  train_cmd->add_option("--layers", tr.layers, "Attentive layers")
      ->check(CLI::Range(1, 2))
      ->capture_default_str();
  train_cmd->add_option("--warm-start", tr.warm_start, "Checkpoint to initialize from");
  train_cmd->add_option("--seed", tr.seed, "Seed")->capture_default_str();
  train_cmd->add_option("--epochs", tr.epochs, "Maximum epochs")
      ->check(CLI::PositiveNumber)
      ->capture_default_str();
  train_cmd->add_option("--out", tr.out, "Checkpoint path")->required();
  train_cmd->add_option("--batch", tr.batch, "Batch size")
      ->check(CLI::PositiveNumber)
      ->capture_default_str();
  train_cmd->add_option("--dropout", tr.dropout, "Dropout rate on h")
      ->check(CLI::Range(0.0, 0.999999))
      ->capture_default_str();
  train_cmd->add_option("--patience", tr.patience, "Early-stop patience")
      ->check(CLI::PositiveNumber)
      ->capture_default_str();
  train_cmd->add_option("--embed", tr.embed, "Word embedding size")
      ->check(CLI::PositiveNumber)
      ->capture_default_str();
  train_cmd->add_option("--hidden", tr.hidden, "LSTM size")
      ->check(CLI::PositiveNumber)
      ->capture_default_str();
  train_cmd->add_option("--visual", tr.visual, "Visual vector size")
      ->check(CLI::PositiveNumber)
      ->capture_default_str();
  train_cmd->add_option("--attention", tr.attention, "Attention space size")
      ->check(CLI::PositiveNumber)
      ->capture_default_str();
  train_cmd->add_flag("--no-rescale", tr.no_rescale, "Do not rescale modulated maps");
  train_cmd->add_option("--encoder", tr.encoder, "tiny or inject")
      ->check(CLI::IsMember({"tiny", "inject"}))
      ->capture_default_str();

  CaptionOptions cap;
  auto* cap_cmd = app.add_subcommand("caption", "Caption images");
  cap_cmd->add_option("--ckpt", cap.ckpt, "Checkpoint")->required();
  cap_cmd->add_option("--input", cap.input, "SCAT image or dataset")->required();
  cap_cmd->add_option("--beam", cap.beam, "Beam width")
      ->check(CLI::PositiveNumber)
      ->capture_default_str();
  cap_cmd->add_option("--max-len", cap.max_len, "Maximum caption length")
      ->check(CLI::PositiveNumber)
      ->capture_default_str();
  cap_cmd->add_option("--dump-attn", cap.dump_attn, "Directory for attention dumps");
  cap_cmd->add_option("--split", cap.split, "Only this dataset split");

  EvalOptions ev;
  auto* eval_cmd = app.add_subcommand("eval", "Score captions against references");
  auto* ev_ckpt = eval_cmd->add_option("--ckpt", ev.ckpt, "Checkpoint to decode with");
  auto* ev_caps = eval_cmd->add_option("--captions", ev.captions, "Score this caption file instead");
  ev_ckpt->excludes(ev_caps);
  eval_cmd->add_option("--data", ev.data, "Dataset directory or JSONL")->required();
  eval_cmd->add_option("--split", ev.split, "Split")
      ->check(CLI::IsMember({"train", "val", "test"}))
      ->capture_default_str();
  eval_cmd->add_option("--beam", ev.beam, "Beam width")
      ->check(CLI::PositiveNumber)
      ->capture_default_str();
  eval_cmd->add_option("--max-len", ev.max_len, "Maximum caption length")
      ->check(CLI::PositiveNumber)
      ->capture_default_str();

  MemcostOptions mem;
  auto* mem_cmd = app.add_subcommand("memcost", "Attention memory cost");
  mem_cmd->set_help_flag("--help", "Print this help message and exit");
  auto* w_opt = mem_cmd->add_option("--w", mem.w, "Map width");
  auto* h_opt = mem_cmd->add_option("--h", mem.h, "Map height");
  auto* c_opt = mem_cmd->add_option("--c", mem.c, "Channels");
  auto* k_opt = mem_cmd->add_option("--k", mem.k, "Attention space size");
  auto* cmp = mem_cmd->add_flag("--compare", mem.compare, "VGG-like vs ResNet-like table");
  for (auto* opt : {w_opt, h_opt, c_opt, k_opt}) opt->excludes(cmp);

  std::string inspect_target;
  auto* inspect_cmd =
      app.add_subcommand("inspect-attention", "Summarize attention dump files");
  inspect_cmd->add_option("path", inspect_target, "Dump file or directory")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kOk : kUsage;
  }

  try {
    if (*gen_cmd) return gen_data(gen, out);
    if (*train_cmd) return train_command(tr, out, err);
    if (*cap_cmd) return caption_command(cap, out);
    if (*eval_cmd) return eval_command(ev, out);
    if (*mem_cmd) {
      if (!mem.compare && (!*w_opt || !*h_opt || !*c_opt || !*k_opt)) {
        throw UsageFailure("memcost needs --w --h --c --k or --compare");
      }
      return memcost_command(mem, out);
    }
    if (*inspect_cmd) return inspect_command(inspect_target, out);
  } catch (const NumericalError& e) {
    err << "error: " << e.what() << "\n";
    return kNumerical;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kUsage;
  }
  return kUsage;
}

int run(const std::vector<std::string>& args, std::ostream& out,
        std::ostream& err) {
  std::vector<const char*> argv{"sca"};
  for (const auto& a : args) argv.push_back(a.c_str());
  return run(static_cast<int>(argv.size()), argv.data(), out, err);
}

}  // namespace sca::cli
