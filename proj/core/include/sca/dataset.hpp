#pragma once

#include <cstddef>
#include <filesystem>
#include <string>
#include <vector>

#include "sca/training.hpp"
#include "sca/vocabulary.hpp"

namespace sca {

// One JSONL line:
//   {"id": 3, "split": "train", "image": "images/000003.scat",
//    "caption": ["a", "red", "square"]}
struct DatasetRecord {
  std::size_t id = 0;
  std::string split;  // train | val | test
  std::string image;  // relative to the dataset directory
  std::vector<std::string> caption;

  friend bool operator==(const DatasetRecord&, const DatasetRecord&) = default;
};

struct Dataset {
  std::filesystem::path root;  // directory holding the JSONL and images
  std::vector<DatasetRecord> records;
  Vocabulary vocabulary;

  std::vector<const DatasetRecord*> split(const std::string& name) const;
  // Images loaded and captions encoded with `vocabulary`.
  std::vector<TrainExample> examples(const std::string& split_name) const;
};

inline constexpr const char* kDatasetFile = "dataset.jsonl";
inline constexpr const char* kVocabularyFile = "vocab.txt";

std::string record_to_json(const DatasetRecord& record);
// Throws FormatError naming the line on malformed input.
DatasetRecord record_from_json(const std::string& line);

void write_records(const std::filesystem::path& path,
                   const std::vector<DatasetRecord>& records);
std::vector<DatasetRecord> read_records(const std::filesystem::path& path);

// `path` is a dataset directory or its JSONL file. The vocabulary comes from
// vocab.txt next to the JSONL.
Dataset load_dataset(const std::filesystem::path& path);

}  // namespace sca
