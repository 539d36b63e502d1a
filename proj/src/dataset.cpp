#include "evg/dataset.hpp"

#include <algorithm>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <future>
#include <thread>

namespace evg {

namespace fs = std::filesystem;

Dataset load_dataset(const std::string& root) {
  if (!fs::is_directory(root)) throw Error(Errc::Io, "dataset root '" + root + "' is not a directory");
  Dataset data;
  for (const auto& entry : fs::directory_iterator(root)) {
    if (entry.is_directory()) data.class_names.push_back(entry.path().filename().string());
  }
  std::sort(data.class_names.begin(), data.class_names.end());

  struct Item {
    std::string path;
    int label;
  };
  std::vector<Item> items;
  for (std::size_t c = 0; c < data.class_names.size(); ++c) {
    std::vector<std::string> files;
    for (const auto& entry : fs::directory_iterator(fs::path(root) / data.class_names[c])) {
      const auto ext = entry.path().extension().string();
      if (entry.is_regular_file() && (ext == ".csv" || ext == ".bin")) files.push_back(entry.path().string());
    }
    std::sort(files.begin(), files.end());
    for (auto& f : files) items.push_back({std::move(f), static_cast<int>(c)});
  }

  data.samples.resize(items.size());
  const std::size_t workers = std::min(worker_count(), std::max<std::size_t>(1, items.size()));
  std::vector<std::future<void>> jobs;
  for (std::size_t w = 0; w < workers; ++w) {
    jobs.push_back(std::async(std::launch::async, [&, w] {
      for (std::size_t i = w; i < items.size(); i += workers) {
        data.samples[i] = read_events_file(items[i].path);
        data.samples[i].label = items[i].label;
      }
    }));
  }
  for (auto& j : jobs) j.get();
  return data;
}

void save_dataset(const std::string& root, const Dataset& data, EventFormat format) {
  std::vector<std::size_t> counters(data.class_names.size(), 0);
  for (const auto& name : data.class_names) fs::create_directories(fs::path(root) / name);
  const char* ext = format == EventFormat::Csv ? ".csv" : ".bin";
  for (const auto& s : data.samples) {
    if (!s.label || *s.label < 0 || static_cast<std::size_t>(*s.label) >= data.class_names.size()) {
      throw Error(Errc::BadLabel, "sample without a valid class label");
    }
    char name[32];
    std::snprintf(name, sizeof(name), "%05zu%s", counters[*s.label]++, ext);
    auto path = fs::path(root) / data.class_names[*s.label] / name;
    write_file(path.string(), write_events(s, format));
  }
}

std::string split_dir(const std::string& root, const std::string& split) {
  auto candidate = fs::path(root) / split;
  return fs::is_directory(candidate) ? candidate.string() : root;
}

std::size_t worker_count() {
  std::size_t n = std::max(1u, std::thread::hardware_concurrency());
  if (const char* env = std::getenv("EVG_THREADS")) {
    const long cap = std::strtol(env, nullptr, 10);
    if (cap > 0) n = std::min<std::size_t>(n, static_cast<std::size_t>(cap));
  }
  return n;
}

}  // namespace evg
