#pragma once

#include <string>
#include <vector>

#include "evg/events.hpp"

namespace evg {

/// Labeled event streams. Labels index into class_names.
struct Dataset {
  std::vector<std::string> class_names;
  std::vector<EventStream> samples;

  std::size_t num_classes() const { return class_names.size(); }
};

/// Loads `<root>/<class_name>/<sample>.{csv|bin}`. Class ids are the
/// lexicographic rank of the class directory name; samples within a class
/// are read in lexicographic file order.
Dataset load_dataset(const std::string& root);

/// Writes the layout read by load_dataset; sample files are numbered.
void save_dataset(const std::string& root, const Dataset& data, EventFormat format = EventFormat::Bin);

/// Resolves `<root>/<split>` when it exists, else `root` itself.
std::string split_dir(const std::string& root, const std::string& split);

/// Worker cap from EVG_THREADS (default: hardware concurrency, at least 1).
std::size_t worker_count();

}  // namespace evg
