#include <gtest/gtest.h>

#include <cmath>
#include <fstream>
#include <limits>
#include <sstream>

#include <json.hpp>

#include "commands.hpp"
#include "sca/dataset.hpp"
#include "sca/decoder.hpp"
#include "sca/encoder.hpp"
#include "support.hpp"

using namespace sca;
namespace fs = std::filesystem;

namespace {

struct Result {
  int code;
  std::string out, err;
};

Result run(const std::vector<std::string>& args) {
  std::ostringstream out, err;
  const int code = cli::run(args, out, err);
  return {code, out.str(), err.str()};
}

std::string file_text(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

std::vector<std::string> lines(const std::string& text) {
  std::vector<std::string> out;
  std::istringstream in(text);
  for (std::string l; std::getline(in, l);) out.push_back(l);
  return out;
}

// Small data and a checkpoint trained for a couple of epochs, shared by the
// tests below.
class CliFixture : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    root_ = sca::testing::scratch_dir("cli");
    data_ = root_ / "data";
    ckpt_ = (root_ / "model.ckpt").string();
    ASSERT_EQ(run({"gen-data", "--n", "20", "--seed", "3", "--out-dir", data_.string()}).code, 0);
    const auto r = run({"train", "--data", data_.string(), "--out", ckpt_, "--epochs", "2",
                        "--hidden", "12", "--embed", "6", "--visual", "8", "--attention", "6"});
    ASSERT_EQ(r.code, 0) << r.err;
  }

  static fs::path root_, data_;
  static std::string ckpt_;
};

fs::path CliFixture::root_, CliFixture::data_;
std::string CliFixture::ckpt_;

}  // namespace

TEST(GenData, CountsAndDeterminism) {
  const auto root = sca::testing::scratch_dir("cli_gen");
  const auto a = root / "a", b = root / "b";
  const auto r = run({"gen-data", "--n", "10", "--seed", "7", "--out-dir", a.string()});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(lines(file_text(a / kDatasetFile)).size(), 10u);
  std::size_t images = 0;
  for (const auto& e : fs::directory_iterator(a / "images")) images += e.path().extension() == ".scat";
  EXPECT_EQ(images, 10u);

  ASSERT_EQ(run({"gen-data", "--n", "10", "--seed", "7", "--out-dir", b.string()}).code, 0);
  for (const auto& e : fs::recursive_directory_iterator(a)) {
    if (!e.is_regular_file()) continue;
    const auto rel = fs::relative(e.path(), a);
    EXPECT_EQ(file_text(e.path()), file_text(b / rel)) << rel;
  }
}

TEST(GenData, UsageErrors) {
  const auto root = sca::testing::scratch_dir("cli_gen_bad");
  EXPECT_EQ(run({"gen-data", "--n", "0", "--seed", "7", "--out-dir", root.string()}).code, 2);
  EXPECT_EQ(run({"gen-data", "--seed", "7", "--out-dir", root.string()}).code, 2);
  ASSERT_EQ(run({"gen-data", "--n", "2", "--seed", "7", "--out-dir", root.string()}).code, 0);
  EXPECT_EQ(run({"gen-data", "--n", "2", "--seed", "7", "--out-dir", root.string()}).code, 2);
  EXPECT_EQ(
      run({"gen-data", "--n", "2", "--seed", "7", "--out-dir", root.string(), "--force"}).code,
      0);
  EXPECT_EQ(run({"no-such-command"}).code, 2);
}

TEST_F(CliFixture, TrainWritesHistoryManifestCheckpointAndVocabulary) {
  const auto out = (root_ / "three.ckpt").string();
  const auto r = run({"train", "--data", data_.string(), "--out", out, "--epochs", "3",
                      "--patience", "10", "--hidden", "8", "--embed", "4", "--visual", "4",
                      "--attention", "4", "--encoder", "inject"});
  ASSERT_EQ(r.code, 0) << r.err;
  const auto history = lines(file_text(out + ".history.csv"));
  ASSERT_EQ(history.size(), 4u);
  EXPECT_EQ(history[0], "epoch,train_loss,val_loss");
  EXPECT_EQ(history[1].rfind("1,", 0), 0u);
  const auto manifest = nlohmann::json::parse(file_text(out + ".manifest.json"));
  EXPECT_EQ(manifest.at("seed"), 1);
  EXPECT_TRUE(fs::exists(out));
  EXPECT_TRUE(fs::exists(out + ".vocab"));
  const auto model = CaptionModel::load(out);
  EXPECT_EQ(model.config().encoder.mode, EncoderMode::FeatureInjection);
  EXPECT_EQ(model.config().dims.hidden, 8u);
}

TEST_F(CliFixture, WarmStartWithDifferentOrderWarnsAboutFreshTensors) {
  const auto out = (root_ / "warm.ckpt").string();
  const auto r = run({"train", "--data", data_.string(), "--out", out, "--epochs", "1",
                      "--order", "sc", "--layers", "2", "--warm-start", ckpt_, "--hidden", "12",
                      "--embed", "6", "--visual", "8", "--attention", "6"});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_NE(r.err.find("warning"), std::string::npos);
  EXPECT_NE(r.err.find("attention.1."), std::string::npos) << r.err;
}

TEST_F(CliFixture, BeamOneMatchesGreedyDecoding) {
  const auto r = run({"caption", "--ckpt", ckpt_, "--input", data_.string(), "--beam", "1"});
  ASSERT_EQ(r.code, 0) << r.err;
  const auto model = CaptionModel::load(ckpt_);
  const auto vocab = Vocabulary::load(ckpt_ + ".vocab");
  const auto data = load_dataset(data_);
  const auto out = lines(r.out);
  ASSERT_EQ(out.size(), data.records.size());
  for (std::size_t i = 0; i < out.size(); ++i) {
    const auto& rec = data.records[i];
    const auto greedy = decode_caption(model, load_feature_map(data.root / rec.image),
                                       {DecodeMode::Greedy, 1, 16});
    std::string joined;
    for (const auto& w : vocab.decode(greedy.tokens)) joined += (joined.empty() ? "" : " ") + w;
    EXPECT_EQ(out[i], std::to_string(rec.id) + "\t" + joined);
  }
}

TEST_F(CliFixture, AttentionDumpFormatAndInspection) {
  const auto dump = root_ / "dump";
  const auto image = data_ / "images" / "000000.scat";
  const auto r = run({"caption", "--ckpt", ckpt_, "--input", image.string(), "--max-len", "4",
                      "--dump-attn", dump.string()});
  ASSERT_EQ(r.code, 0) << r.err;
  std::vector<fs::path> files;
  for (const auto& e : fs::directory_iterator(dump)) files.push_back(e.path());
  std::sort(files.begin(), files.end());
  ASSERT_FALSE(files.empty());
  EXPECT_LE(files.size(), 4u);
  EXPECT_EQ(files[0].filename(), "000000_t0.txt");

  std::istringstream in(file_text(files[0]));
  std::string header, tag;
  std::getline(in, header);
  EXPECT_EQ(header.rfind("t=0 layer=2 word=", 0), 0u) << header;
  std::size_t w = 0, h = 0, c = 0;
  in >> tag >> w >> h;
  EXPECT_EQ(tag, "alpha");
  EXPECT_EQ(w, 8u);
  EXPECT_EQ(h, 8u);
  double sum = 0.0, x = 0.0;
  for (std::size_t i = 0; i < w * h; ++i) {
    ASSERT_TRUE(in >> x);
    sum += x;
  }
  EXPECT_NEAR(sum, 1.0, 1e-12);
  in >> tag >> c;
  EXPECT_EQ(tag, "beta");
  EXPECT_EQ(c, 16u);
  sum = 0.0;
  for (std::size_t i = 0; i < c; ++i) {
    ASSERT_TRUE(in >> x);
    sum += x;
  }
  EXPECT_NEAR(sum, 1.0, 1e-12);

  const auto ins = run({"inspect-attention", dump.string()});
  ASSERT_EQ(ins.code, 0) << ins.err;
  EXPECT_EQ(lines(ins.out).size(), files.size());
  EXPECT_NE(ins.out.find("alpha_sum=1.0000"), std::string::npos);
  EXPECT_EQ(run({"inspect-attention", (root_ / "missing").string()}).code, 2);
}

TEST_F(CliFixture, EvalScoresIdentityAndUntrainedModel) {
  const auto data = load_dataset(data_);
  const auto caps = root_ / "refs.txt";
  {
    std::ofstream f(caps);
    for (const auto& rec : data.records) {
      f << rec.id << '\t';
      for (std::size_t i = 0; i < rec.caption.size(); ++i) f << (i ? " " : "") << rec.caption[i];
      f << '\n';
    }
  }
  const auto ident = run({"eval", "--captions", caps.string(), "--data", data_.string()});
  ASSERT_EQ(ident.code, 0) << ident.err;
  EXPECT_EQ(ident.out, "B@1 1.0000\nB@2 1.0000\nB@3 1.0000\nB@4 1.0000\nRG 1.0000\n");

  const auto untrained = (root_ / "untrained.ckpt").string();
  ModelConfig config;
  config.vocab_size = data.vocabulary.size();
  CaptionModel::initialize(config, 1).save(untrained);
  data.vocabulary.save(untrained + ".vocab");
  const auto r = run({"eval", "--ckpt", untrained, "--data", data_.string(), "--split", "train",
                      "--max-len", "8"});
  ASSERT_EQ(r.code, 0) << r.err;
  const auto out = lines(r.out);
  ASSERT_EQ(out.size(), 5u);
  EXPECT_LT(std::stod(out[3].substr(4)), 0.05) << r.out;

  EXPECT_EQ(run({"eval", "--data", data_.string()}).code, 2);
  EXPECT_EQ(run({"eval", "--ckpt", ckpt_, "--captions", caps.string(), "--data", data_.string()})
                .code,
            2);
}

TEST_F(CliFixture, BadPathsExitWithUsageCode) {
  EXPECT_EQ(run({"caption", "--ckpt", (root_ / "nope.ckpt").string(), "--input",
                 data_.string()})
                .code,
            2);
  EXPECT_EQ(run({"caption", "--ckpt", ckpt_, "--input", (root_ / "nope").string()}).code, 2);
  EXPECT_EQ(run({"train", "--data", (root_ / "nope").string(), "--out",
                 (root_ / "x.ckpt").string()})
                .code,
            2);
}

TEST_F(CliFixture, DivergentTrainingExitsWithNumericalCode) {
  const auto bad = root_ / "bad";
  ASSERT_EQ(run({"gen-data", "--n", "10", "--seed", "1", "--out-dir", bad.string()}).code, 0);
  Tensor poisoned = Tensor::full({16, 16, 3}, std::numeric_limits<double>::quiet_NaN());
  save_feature_map(bad / "images" / "000000.scat", poisoned);
  const auto r = run({"train", "--data", bad.string(), "--out", (root_ / "nan.ckpt").string(),
                      "--epochs", "1", "--hidden", "4", "--embed", "4", "--visual", "4",
                      "--attention", "4"});
  EXPECT_EQ(r.code, 3);
  EXPECT_NE(r.err.find("non-finite"), std::string::npos) << r.err;
}

TEST(Memcost, PrintsExactCounts) {
  const auto r = run({"memcost", "--w", "7", "--h", "7", "--c", "512", "--k", "512"});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(r.out,
            "joint 12845056\nspatial 25088\nchannel 262144\nfactored 287232\nratio 44.72\n");
  const auto unit = run({"memcost", "--w", "1", "--h", "1", "--c", "1", "--k", "1"});
  EXPECT_EQ(unit.out, "joint 1\nspatial 1\nchannel 1\nfactored 2\nratio 0.50\n");
  EXPECT_EQ(run({"memcost", "--w", "7"}).code, 2);
}

TEST(Memcost, CompareTableShowsChannelTermForResNetGeometry) {
  const auto r = run({"memcost", "--compare"});
  ASSERT_EQ(r.code, 0) << r.err;
  const auto out = lines(r.out);
  ASSERT_EQ(out.size(), 3u);
  EXPECT_NE(out[1].find("vgg-like"), std::string::npos);
  EXPECT_NE(out[2].find("resnet-like"), std::string::npos);
  // 7*7*2048*512 joint; 7*7*512 spatial; 2048*512 channel.
  EXPECT_NE(out[2].find("51380224"), std::string::npos);
  EXPECT_NE(out[2].find("1048576"), std::string::npos);
  EXPECT_EQ(out[2].substr(out[2].size() - 7), "channel");
}
