#include "faircl/datastream.hpp"

#include <algorithm>
#include <charconv>
#include <fstream>
#include <map>
#include <random>
#include <set>
#include <sstream>
#include <stdexcept>
#include <unordered_map>
#include <unordered_set>

namespace faircl {

namespace {

std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> fields;
  std::string field;
  for (char c : line) {
    if (c == ',') {
      fields.push_back(std::move(field));
      field.clear();
    } else {
      field.push_back(c);
    }
  }
  fields.push_back(std::move(field));
  return fields;
}

std::string strip_cr(std::string line) {
  if (!line.empty() && line.back() == '\r') line.pop_back();
  return line;
}

std::string trim(const std::string& s) {
  const auto begin = s.find_first_not_of(" \t");
  if (begin == std::string::npos) return "";
  const auto end = s.find_last_not_of(" \t");
  return s.substr(begin, end - begin + 1);
}

double parse_double(const std::string& token, const std::string& context) {
  double value = 0;
  const char* first = token.data();
  const char* last = token.data() + token.size();
  auto [ptr, ec] = std::from_chars(first, last, value);
  if (ec != std::errc() || ptr != last)
    throw std::runtime_error(context + ": not a number: '" + token + "'");
  return value;
}

std::string format_double(double v) {
  char buf[32];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, ptr);
}

}  // namespace

std::string_view to_token(Sex sex) { return sex == Sex::male ? "M" : "F"; }

std::string_view to_token(AgeGroup group) { return kAgeGroupTokens[static_cast<int>(group)]; }

Sex parse_sex(std::string_view token, const std::string& context) {
  if (token == "M") return Sex::male;
  if (token == "F") return Sex::female;
  throw std::runtime_error(context + ": unknown sex token '" + std::string(token) +
                           "' (expected M or F)");
}

AgeGroup parse_age_group(std::string_view token, const std::string& context) {
  for (int i = 0; i < kNumAgeGroups; ++i)
    if (token == kAgeGroupTokens[i]) return static_cast<AgeGroup>(i);
  throw std::runtime_error(context + ": unknown age_group token '" + std::string(token) + "'");
}

Dataset load_manifest(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open manifest: " + path.string());

  std::string line;
  if (!std::getline(in, line)) throw std::runtime_error("manifest is empty: " + path.string());
  const auto header = split_csv(strip_cr(line));
  const std::array<std::string, 4> required{"sample_id", "patient_id", "sex", "age_group"};
  if (header.size() < 4)
    throw std::runtime_error("manifest header missing required columns");
  for (std::size_t i = 0; i < required.size(); ++i)
    if (header[i] != required[i])
      throw std::runtime_error("manifest header column " + std::to_string(i) + " must be '" +
                               required[i] + "', got '" + header[i] + "'");

  Dataset dataset;
  std::size_t col = 4;
  while (col < header.size() && header[col] == "f" + std::to_string(col - 4)) ++col;
  dataset.feature_dim = static_cast<Eigen::Index>(col - 4);
  if (dataset.feature_dim == 0)
    throw std::runtime_error("manifest has no feature columns (expected f0, f1, ...)");
  const std::size_t first_label = col;
  for (; col < header.size(); ++col) {
    if (header[col].rfind("L:", 0) != 0 || header[col].size() <= 2)
      throw std::runtime_error("manifest column '" + header[col] +
                               "' is neither a feature nor an L:<name> label");
    dataset.label_names.push_back(header[col].substr(2));
  }
  if (dataset.label_names.empty())
    throw std::runtime_error("manifest has no label columns (expected L:<name>)");
  {
    std::unordered_set<std::string> names(dataset.label_names.begin(), dataset.label_names.end());
    if (names.size() != dataset.label_names.size())
      throw std::runtime_error("manifest has duplicate label columns");
  }

  std::unordered_set<std::string> seen_ids;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    line = strip_cr(line);
    if (line.empty()) continue;
    const std::string ctx = "manifest line " + std::to_string(line_no);
    const auto fields = split_csv(line);
    if (fields.size() != header.size())
      throw std::runtime_error(ctx + ": expected " + std::to_string(header.size()) +
                               " fields, got " + std::to_string(fields.size()));
    Sample s;
    s.sample_id = fields[0];
    s.patient_id = fields[1];
    if (s.sample_id.empty() || s.patient_id.empty())
      throw std::runtime_error(ctx + ": empty sample_id or patient_id");
    if (!seen_ids.insert(s.sample_id).second)
      throw std::runtime_error(ctx + ": duplicate sample_id '" + s.sample_id + "'");
    s.sex = parse_sex(fields[2], ctx);
    s.age_group = parse_age_group(fields[3], ctx);
    s.features.resize(dataset.feature_dim);
    for (Eigen::Index d = 0; d < dataset.feature_dim; ++d)
      s.features[d] = parse_double(fields[4 + d], ctx);
    const auto num_labels = static_cast<Eigen::Index>(dataset.label_names.size());
    s.label_values.resize(num_labels);
    for (Eigen::Index l = 0; l < num_labels; ++l) {
      const std::string& tok = fields[first_label + l];
      if (tok == "0")
        s.label_values[l] = 0.0;
      else if (tok == "1")
        s.label_values[l] = 1.0;
      else
        throw std::runtime_error(ctx + ": label L:" + dataset.label_names[l] +
                                 " must be 0 or 1, got '" + tok + "'");
    }
    s.label_known = ArrayXb::Constant(num_labels, true);
    dataset.samples.push_back(std::move(s));
  }
  return dataset;
}

void write_manifest(const Dataset& dataset, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write manifest: " + path.string());
  out << "sample_id,patient_id,sex,age_group";
  for (Eigen::Index d = 0; d < dataset.feature_dim; ++d) out << ",f" << d;
  for (const auto& name : dataset.label_names) out << ",L:" << name;
  out << "\n";
  for (const auto& s : dataset.samples) {
    out << s.sample_id << ',' << s.patient_id << ',' << to_token(s.sex) << ','
        << to_token(s.age_group);
    for (Eigen::Index d = 0; d < s.features.size(); ++d) out << ',' << format_double(s.features[d]);
    for (Eigen::Index l = 0; l < s.label_values.size(); ++l)
      out << ',' << (s.label_values[l] != 0.0 ? '1' : '0');
    out << "\n";
  }
  if (!out) throw std::runtime_error("failed writing manifest: " + path.string());
}

Dataset keep_one_image_per_patient(const Dataset& dataset, std::uint64_t seed) {
  std::unordered_map<std::string, std::vector<std::size_t>> by_patient;
  std::vector<std::string> patient_order;
  for (std::size_t i = 0; i < dataset.samples.size(); ++i) {
    auto& indices = by_patient[dataset.samples[i].patient_id];
    if (indices.empty()) patient_order.push_back(dataset.samples[i].patient_id);
    indices.push_back(i);
  }
  std::mt19937_64 rng(seed);
  std::set<std::size_t> selected;
  for (const auto& pid : patient_order) {
    const auto& indices = by_patient[pid];
    if (indices.size() == 1) {
      selected.insert(indices[0]);
    } else {
      std::uniform_int_distribution<std::size_t> pick(0, indices.size() - 1);
      selected.insert(indices[pick(rng)]);
    }
  }
  Dataset out{dataset.label_names, dataset.feature_dim, {}};
  out.samples.reserve(selected.size());
  for (std::size_t i = 0; i < dataset.samples.size(); ++i)
    if (selected.count(i)) out.samples.push_back(dataset.samples[i]);
  return out;
}

Dataset exclude_no_finding(const Dataset& dataset) {
  Dataset out{dataset.label_names, dataset.feature_dim, {}};
  for (const auto& s : dataset.samples)
    if ((s.label_values.array() != 0.0).any()) out.samples.push_back(s);
  return out;
}

std::vector<TaskSpec> load_task_specs(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open task spec file: " + path.string());
  std::vector<TaskSpec> specs;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    line = strip_cr(line);
    if (trim(line).empty() || trim(line)[0] == '#') continue;
    TaskSpec spec;
    spec.task_index = static_cast<int>(specs.size());
    for (const auto& raw : split_csv(line)) {
      const auto name = trim(raw);
      if (name.empty())
        throw std::runtime_error("task spec line " + std::to_string(line_no) +
                                 ": empty pathology name");
      spec.pathologies.push_back(name);
    }
    specs.push_back(std::move(spec));
  }
  if (specs.empty()) throw std::runtime_error("task spec file has no tasks: " + path.string());
  return specs;
}

void write_task_specs(const std::vector<TaskSpec>& specs, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write task spec file: " + path.string());
  for (const auto& spec : specs) {
    for (std::size_t i = 0; i < spec.pathologies.size(); ++i)
      out << (i ? "," : "") << spec.pathologies[i];
    out << "\n";
  }
}

std::vector<TaskSpec> default_task_partition(const std::vector<std::string>& label_names,
                                             int num_tasks) {
  if (num_tasks < 1) throw std::invalid_argument("default_task_partition: num_tasks must be >= 1");
  const int n = static_cast<int>(label_names.size());
  if (n < num_tasks)
    throw std::invalid_argument("default_task_partition: fewer labels than tasks");
  std::vector<TaskSpec> specs(num_tasks);
  const int base = n / num_tasks;
  const int extra = n % num_tasks;
  int next = 0;
  for (int t = 0; t < num_tasks; ++t) {
    specs[t].task_index = t;
    const int count = base + (t < extra ? 1 : 0);
    for (int i = 0; i < count; ++i) specs[t].pathologies.push_back(label_names[next++]);
  }
  return specs;
}

namespace {

// Largest-remainder apportionment of n patients over the three splits.
std::array<std::size_t, 3> apportion(std::size_t n, const std::array<double, 3>& ratios) {
  std::array<std::size_t, 3> counts{};
  std::array<double, 3> fracs{};
  std::size_t assigned = 0;
  for (int i = 0; i < 3; ++i) {
    const double exact = static_cast<double>(n) * ratios[i];
    counts[i] = static_cast<std::size_t>(exact);
    fracs[i] = exact - static_cast<double>(counts[i]);
    assigned += counts[i];
  }
  std::array<int, 3> order{0, 1, 2};
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) { return fracs[a] > fracs[b]; });
  for (int i = 0; assigned < n; ++i) {
    ++counts[order[i % 3]];
    ++assigned;
  }
  return counts;
}

}  // namespace

TaskStream build_task_stream(const Dataset& dataset, const std::vector<TaskSpec>& specs,
                             const std::array<double, 3>& split_ratios, std::uint64_t seed) {
  if (specs.empty()) throw std::invalid_argument("build_task_stream: no task specs");
  double ratio_sum = 0;
  for (double r : split_ratios) {
    if (r < 0.0 || r > 1.0)
      throw std::invalid_argument("build_task_stream: split ratios must lie in [0,1]");
    ratio_sum += r;
  }
  if (std::abs(ratio_sum - 1.0) > 1e-9)
    throw std::invalid_argument("build_task_stream: split ratios must sum to 1");

  TaskStream stream;
  stream.feature_dim = dataset.feature_dim;
  stream.source_dataset_size = dataset.samples.size();

  std::unordered_map<std::string, int> dataset_index;
  for (std::size_t i = 0; i < dataset.label_names.size(); ++i)
    dataset_index[dataset.label_names[i]] = static_cast<int>(i);

  std::vector<int> stream_to_dataset;
  std::unordered_set<std::string> claimed;
  for (const auto& spec : specs) {
    if (spec.pathologies.empty())
      throw std::invalid_argument("build_task_stream: task " + std::to_string(spec.task_index) +
                                  " has no pathologies");
    for (const auto& name : spec.pathologies) {
      if (!dataset_index.count(name))
        throw std::invalid_argument("build_task_stream: unknown pathology '" + name + "'");
      if (!claimed.insert(name).second)
        throw std::invalid_argument("build_task_stream: pathology '" + name +
                                    "' appears in more than one task");
      stream.label_names.push_back(name);
      stream.origin_task.push_back(spec.task_index);
      stream_to_dataset.push_back(dataset_index[name]);
    }
  }
  if (claimed.size() != dataset.label_names.size())
    throw std::invalid_argument("build_task_stream: task specs must cover every dataset label");

  const auto num_labels = static_cast<Eigen::Index>(stream.label_names.size());

  // Reorder every sample's label vector into stream order.
  std::vector<Sample> samples = dataset.samples;
  for (auto& s : samples) {
    Vector<double> values(num_labels);
    for (Eigen::Index l = 0; l < num_labels; ++l) values[l] = s.label_values[stream_to_dataset[l]];
    s.label_values = std::move(values);
    s.label_known = ArrayXb::Constant(num_labels, true);
  }

  // Global patient split: grouped by first positive label so each split sees
  // every pathology, then apportioned per group. A patient lands in the same
  // split for every task containing it.
  std::vector<std::string> patient_order;
  std::unordered_map<std::string, int> patient_key;
  for (const auto& s : samples) {
    int first_positive = static_cast<int>(num_labels);
    for (Eigen::Index l = 0; l < num_labels; ++l)
      if (s.label_values[l] != 0.0) {
        first_positive = static_cast<int>(l);
        break;
      }
    auto it = patient_key.find(s.patient_id);
    if (it == patient_key.end()) {
      patient_key[s.patient_id] = first_positive;
      patient_order.push_back(s.patient_id);
    } else {
      it->second = std::min(it->second, first_positive);
    }
  }
  std::map<int, std::vector<std::string>> groups;
  for (const auto& pid : patient_order) groups[patient_key[pid]].push_back(pid);

  std::mt19937_64 rng(seed);
  std::unordered_map<std::string, int> patient_split;
  for (auto& [key, patients] : groups) {
    std::shuffle(patients.begin(), patients.end(), rng);
    const auto counts = apportion(patients.size(), split_ratios);
    std::size_t at = 0;
    for (int split = 0; split < 3; ++split)
      for (std::size_t i = 0; i < counts[split]; ++i) patient_split[patients[at++]] = split;
  }

  for (const auto& spec : specs) {
    TaskData task;
    task.spec = spec;
    Eigen::Index offset = 0;
    for (int t = 0; t < spec.task_index; ++t)
      offset += static_cast<Eigen::Index>(specs[t].pathologies.size());
    for (std::size_t i = 0; i < spec.pathologies.size(); ++i)
      task.label_indices.push_back(static_cast<int>(offset + i));

    ArrayXb mask = ArrayXb::Constant(num_labels, false);
    for (int l : task.label_indices) mask[l] = true;

    for (const auto& s : samples) {
      bool eligible = false;
      for (int l : task.label_indices)
        if (s.label_values[l] != 0.0) {
          eligible = true;
          break;
        }
      if (!eligible) continue;
      Sample copy = s;
      copy.label_known = mask;
      switch (patient_split.at(s.patient_id)) {
        case 0: task.train.push_back(std::move(copy)); break;
        case 1: task.val.push_back(std::move(copy)); break;
        default: task.test.push_back(std::move(copy)); break;
      }
    }
    if (task.size() == 0)
      throw std::runtime_error("build_task_stream: task " + std::to_string(spec.task_index) +
                               " has no eligible samples");
    stream.tasks.push_back(std::move(task));
  }

  Eigen::Index cumulative = 0;
  for (const auto& task : stream.tasks) {
    cumulative += static_cast<Eigen::Index>(task.label_indices.size());
    stream.head_sizes.push_back(cumulative);
  }
  return stream;
}

TaskFrequencyReport task_frequency_report(const TaskStream& stream) {
  TaskFrequencyReport report;
  report.label_names = stream.label_names;
  const auto num_labels = static_cast<std::size_t>(stream.num_labels());
  for (const auto& task : stream.tasks) {
    TaskFrequency freq;
    freq.task_index = task.spec.task_index;
    freq.train_size = task.train.size();
    freq.val_size = task.val.size();
    freq.test_size = task.test.size();
    freq.num_samples = task.size();
    freq.visible_positives.assign(num_labels, 0);
    freq.hidden_positives.assign(num_labels, 0);
    auto count = [&](const std::vector<Sample>& split) {
      for (const auto& s : split) {
        ++freq.sex_counts[s.sex == Sex::male ? 0 : 1];
        ++freq.age_counts[static_cast<int>(s.age_group)];
        for (std::size_t l = 0; l < num_labels; ++l) {
          if (s.label_values[static_cast<Eigen::Index>(l)] == 0.0) continue;
          if (s.label_known[static_cast<Eigen::Index>(l)])
            ++freq.visible_positives[l];
          else
            ++freq.hidden_positives[l];
        }
      }
    };
    count(task.train);
    count(task.val);
    count(task.test);
    report.tasks.push_back(std::move(freq));
  }
  return report;
}

std::string render_report(const TaskFrequencyReport& report) {
  std::ostringstream out;
  for (const auto& task : report.tasks) {
    out << "task " << task.task_index << ": " << task.num_samples << " samples (train "
        << task.train_size << ", val " << task.val_size << ", test " << task.test_size << ")\n";
    out << "  sex: M=" << task.sex_counts[0] << " F=" << task.sex_counts[1] << "\n";
    out << "  age:";
    for (int a = 0; a < kNumAgeGroups; ++a)
      out << " " << kAgeGroupTokens[a] << "=" << task.age_counts[a];
    out << "\n  positives (visible/hidden):\n";
    for (std::size_t l = 0; l < report.label_names.size(); ++l) {
      if (task.visible_positives[l] == 0 && task.hidden_positives[l] == 0) continue;
      out << "    " << report.label_names[l] << ": " << task.visible_positives[l] << "/"
          << task.hidden_positives[l] << "\n";
    }
  }
  return out.str();
}

Dataset generate_synthetic(const SyntheticConfig& config) {
  if (config.num_labels < 1) throw std::invalid_argument("synthetic: num_labels must be >= 1");
  if (config.samples_per_label < 1)
    throw std::invalid_argument("synthetic: samples_per_label must be >= 1");
  if (config.feature_dim < config.num_labels)
    throw std::invalid_argument("synthetic: feature_dim must be at least num_labels");
  if (config.noise_std < 0.0) throw std::invalid_argument("synthetic: noise_std must be >= 0");
  if (config.label_correlation < 0.0 || config.label_correlation > 1.0)
    throw std::invalid_argument("synthetic: label_correlation must lie in [0,1]");
  if (config.male_fraction < 0.0 || config.male_fraction > 1.0)
    throw std::invalid_argument("synthetic: male_fraction must lie in [0,1]");
  if (!config.label_names.empty() &&
      config.label_names.size() != static_cast<std::size_t>(config.num_labels))
    throw std::invalid_argument("synthetic: label_names must match num_labels");

  Dataset dataset;
  dataset.feature_dim = config.feature_dim;
  if (config.label_names.empty()) {
    for (int l = 0; l < config.num_labels; ++l) {
      char buf[8];
      std::snprintf(buf, sizeof(buf), "L%02d", l);
      dataset.label_names.emplace_back(buf);
    }
  } else {
    dataset.label_names = config.label_names;
  }

  std::mt19937_64 rng(config.seed);
  std::bernoulli_distribution male(config.male_fraction);
  std::bernoulli_distribution co_occur(config.label_correlation);
  std::discrete_distribution<int> age(config.age_frequencies.begin(),
                                      config.age_frequencies.end());
  std::normal_distribution<double> noise(0.0, 1.0);

  int next_id = 0;
  for (int primary = 0; primary < config.num_labels; ++primary) {
    for (int i = 0; i < config.samples_per_label; ++i) {
      Sample s;
      char buf[16];
      std::snprintf(buf, sizeof(buf), "s%05d", next_id);
      s.sample_id = buf;
      std::snprintf(buf, sizeof(buf), "p%05d", next_id);
      s.patient_id = buf;
      ++next_id;
      s.sex = male(rng) ? Sex::male : Sex::female;
      s.age_group = static_cast<AgeGroup>(age(rng));
      s.label_values = Vector<double>::Zero(config.num_labels);
      s.label_values[primary] = 1.0;
      for (int m = 0; m < config.num_labels; ++m)
        if (m != primary && co_occur(rng)) s.label_values[m] = 1.0;
      const double sex_scale = s.sex == Sex::male ? config.male_scale : config.female_scale;
      const double group_scale = sex_scale * config.age_scales[static_cast<int>(s.age_group)];
      s.features.resize(config.feature_dim);
      for (Eigen::Index d = 0; d < config.feature_dim; ++d)
        s.features[d] = config.noise_std * noise(rng);
      for (int m = 0; m < config.num_labels; ++m)
        if (s.label_values[m] != 0.0)
          s.features[m] += config.signal_strength * group_scale;
      s.label_known = ArrayXb::Constant(config.num_labels, true);
      dataset.samples.push_back(std::move(s));
    }
  }
  return dataset;
}

}  // namespace faircl
