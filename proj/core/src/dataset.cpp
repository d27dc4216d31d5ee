#include "sca/dataset.hpp"

#include <fstream>

#include <json.hpp>

#include "sca/encoder.hpp"
#include "sca/errors.hpp"

namespace sca {

using nlohmann::json;

std::vector<const DatasetRecord*> Dataset::split(const std::string& name) const {
  std::vector<const DatasetRecord*> out;
  for (const auto& r : records) {
    if (r.split == name) out.push_back(&r);
  }
  return out;
}

std::vector<TrainExample> Dataset::examples(const std::string& split_name) const {
  std::vector<TrainExample> out;
  for (const DatasetRecord* r : split(split_name)) {
    out.push_back(TrainExample{load_feature_map(root / r->image),
                               vocabulary.encode(r->caption)});
  }
  return out;
}

std::string record_to_json(const DatasetRecord& record) {
  json j;
  j["id"] = record.id;
  j["split"] = record.split;
  j["image"] = record.image;
  j["caption"] = record.caption;
  return j.dump();
}

DatasetRecord record_from_json(const std::string& line) {
  try {
    const json j = json::parse(line);
    DatasetRecord r;
    r.id = j.at("id").get<std::size_t>();
    r.split = j.at("split").get<std::string>();
    r.image = j.at("image").get<std::string>();
    r.caption = j.at("caption").get<std::vector<std::string>>();
    if (r.split != "train" && r.split != "val" && r.split != "test") {
      throw FormatError("unknown split '" + r.split + "'", 0);
    }
    return r;
  } catch (const json::exception& e) {
    throw FormatError(std::string("bad dataset record: ") + e.what(), 0);
  }
}

void write_records(const std::filesystem::path& path,
                   const std::vector<DatasetRecord>& records) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  for (const auto& r : records) out << record_to_json(r) << '\n';
}

std::vector<DatasetRecord> read_records(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  std::vector<DatasetRecord> out;
  std::string line;
  std::size_t number = 0;
  while (std::getline(in, line)) {
    ++number;
    if (line.empty()) continue;
    try {
      out.push_back(record_from_json(line));
    } catch (const FormatError& e) {
      throw FormatError(path.string() + " line " + std::to_string(number) +
                            ": " + e.what(),
                        0);
    }
  }
  return out;
}

Dataset load_dataset(const std::filesystem::path& path) {
  const std::filesystem::path file = std::filesystem::is_directory(path)
                                         ? path / kDatasetFile
                                         : path;
  if (!std::filesystem::exists(file)) {
    throw std::runtime_error("no dataset at " + path.string());
  }
  Dataset d;
  d.root = file.parent_path();
  d.records = read_records(file);
  d.vocabulary = Vocabulary::load(d.root / kVocabularyFile);
  return d;
}

}  // namespace sca
