#include "mvselect/experiment.hpp"

#include <openssl/evp.h>

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <numbers>
#include <set>
#include <sstream>

namespace mvsel {

namespace {

using nlohmann::json;

// Reads one JSON object, recording which keys were consumed so that leftovers
// can be reported as unknown.
class Section {
 public:
  Section(const json& node, std::string path) : node_(node), path_(std::move(path)) {
    if (!node_.is_object()) throw ConfigError(path_, "expected an object");
  }

  bool has(const std::string& key) const { return node_.contains(key); }

  template <typename T>
  T get(const std::string& key, T fallback) {
    used_.insert(key);
    if (!node_.contains(key)) return fallback;
    return convert<T>(key);
  }

  template <typename T>
  T require(const std::string& key) {
    used_.insert(key);
    if (!node_.contains(key)) throw ConfigError(child(key), "required key is missing");
    return convert<T>(key);
  }

  Section sub(const std::string& key, bool required) {
    used_.insert(key);
    if (!node_.contains(key)) {
      if (required) throw ConfigError(child(key), "required section is missing");
      return Section(empty(), child(key));
    }
    return Section(node_.at(key), child(key));
  }

  const json& raw(const std::string& key) {
    used_.insert(key);
    return node_.at(key);
  }

  std::string child(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }

  void done() const {
    for (const auto& [key, value] : node_.items())
      if (!used_.count(key)) throw ConfigError(child(key), "unknown key");
  }

 private:
  static const json& empty() {
    static const json e = json::object();
    return e;
  }

  template <typename T>
  T convert(const std::string& key) const {
    const json& v = node_.at(key);
    try {
      if constexpr (std::is_same_v<T, bool>) {
        if (!v.is_boolean()) throw ConfigError(child(key), "expected a boolean");
      } else if constexpr (std::is_integral_v<T>) {
        if (!v.is_number_integer()) throw ConfigError(child(key), "expected an integer");
        if constexpr (std::is_unsigned_v<T>)
          if (v.get<std::int64_t>() < 0) throw ConfigError(child(key), "expected a non-negative integer");
      } else if constexpr (std::is_floating_point_v<T>) {
        if (!v.is_number()) throw ConfigError(child(key), "expected a number");
      } else if constexpr (std::is_same_v<T, std::string>) {
        if (!v.is_string()) throw ConfigError(child(key), "expected a string");
      }
      return v.get<T>();
    } catch (const json::exception& e) {
      throw ConfigError(child(key), std::string("invalid value: ") + e.what());
    }
  }

  const json& node_;
  std::string path_;
  std::set<std::string> used_;
};

constexpr double kDeg = std::numbers::pi / 180.0;

std::vector<AmbiguousPair> parsePairs(const json& node, const std::string& path) {
  if (!node.is_array()) throw ConfigError(path, "expected an array");
  std::vector<AmbiguousPair> pairs;
  for (std::size_t i = 0; i < node.size(); ++i) {
    Section s(node[i], path + "[" + std::to_string(i) + "]");
    const auto classes = s.require<std::vector<int>>("classes");
    if (classes.size() != 2) throw ConfigError(s.child("classes"), "expected exactly two class ids");
    pairs.push_back({classes[0], classes[1], s.get<std::vector<int>>("discriminative_views", {})});
    s.done();
  }
  return pairs;
}

std::vector<CameraPose> parsePoses(const json& node, const std::string& path) {
  if (!node.is_array()) throw ConfigError(path, "expected an array");
  std::vector<CameraPose> poses;
  for (std::size_t i = 0; i < node.size(); ++i) {
    Section s(node[i], path + "[" + std::to_string(i) + "]");
    CameraPose p;
    p.x = s.require<double>("x");
    p.y = s.require<double>("y");
    p.heading = s.require<double>("heading_deg") * kDeg;
    p.halfFov = 0.5 * s.require<double>("fov_deg") * kDeg;
    p.range = s.require<double>("range");
    s.done();
    poses.push_back(p);
  }
  return poses;
}

void parseWorld(Section& w, ExperimentConfig& c) {
  const auto worldSeed = w.get<std::uint64_t>("seed", 0);
  c.sizes.train = w.get<std::size_t>("train_instances", c.sizes.train);
  c.sizes.validation = w.get<std::size_t>("val_instances", c.sizes.validation);
  c.sizes.test = w.get<std::size_t>("test_instances", c.sizes.test);
  if (c.task == TaskKind::Classification) {
    auto& k = c.classification;
    k.seed = worldSeed;
    k.cameras = w.require<int>("cameras");
    k.classes = w.get<int>("classes", k.classes);
    k.obsDim = w.get<int>("obs_dim", k.obsDim);
    k.noise = w.get<double>("noise", k.noise);
    k.separation = w.get<double>("separation", k.separation);
    k.randomPose = w.get<bool>("random_pose", k.randomPose);
    if (w.has("ambiguous_pairs")) k.pairs = parsePairs(w.raw("ambiguous_pairs"), w.child("ambiguous_pairs"));
  } else {
    auto& k = c.detection;
    k.seed = worldSeed;
    k.cameras = w.require<int>("cameras");
    k.height = w.get<int>("height", k.height);
    k.width = w.get<int>("width", k.width);
    k.channels = w.get<int>("obs_dim", k.channels);
    k.noise = w.get<double>("noise", k.noise);
    k.minOccupants = w.get<int>("min_occupants", k.minOccupants);
    k.maxOccupants = w.get<int>("max_occupants", k.maxOccupants);
    k.occlusion = w.get<bool>("occlusion", k.occlusion);
    k.minCoverage = w.get<double>("min_coverage", k.minCoverage);
    k.cellSizeM = w.get<double>("cell_size_m", k.cellSizeM);
    k.fovDeg = w.get<double>("fov_deg", k.fovDeg);
    k.rangeFraction = w.get<double>("range_fraction", k.rangeFraction);
    k.attenuation = w.get<double>("attenuation", k.attenuation);
    if (w.has("poses")) {
      k.poses = parsePoses(w.raw("poses"), w.child("poses"));
      if (static_cast<int>(k.poses.size()) != k.cameras)
        throw ConfigError(w.child("poses"), "expected " + std::to_string(k.cameras) + " poses");
    }
  }
  w.done();
}

json posesJson(const std::vector<CameraPose>& poses) {
  json out = json::array();
  for (const auto& p : poses)
    out.push_back({{"x", p.x}, {"y", p.y}, {"heading_deg", p.heading / kDeg}, {"fov_deg", 2 * p.halfFov / kDeg},
                   {"range", p.range}});
  return out;
}

void putF64(std::string& out, double v) {
  auto bits = std::bit_cast<std::uint64_t>(v);
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((bits >> (8 * i)) & 0xff));
}

void putU(std::string& out, std::uint64_t v, int bytes) {
  for (int i = 0; i < bytes; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

std::uint64_t getU(const std::string& in, std::size_t& pos, int bytes) {
  if (pos + static_cast<std::size_t>(bytes) > in.size()) throw std::runtime_error("checkpoint is truncated");
  std::uint64_t v = 0;
  for (int i = 0; i < bytes; ++i) v |= static_cast<std::uint64_t>(static_cast<unsigned char>(in[pos + i])) << (8 * i);
  pos += static_cast<std::size_t>(bytes);
  return v;
}

json specsJson(const DenseNet& net) {
  json out = json::array();
  for (const auto& s : net.specs()) out.push_back({{"in", s.in}, {"out", s.out}, {"act", toString(s.act)}});
  return out;
}

struct Writer {
  json tensors = json::array();
  std::string data;

  void add(const std::string& name, const Tensor& t) {
    tensors.push_back({{"name", name}, {"shape", t.shape}});
    for (double v : t.data) putF64(data, v);
  }
  void add(const std::string& prefix, const DenseNet& net) {
    for (std::size_t i = 0; i < net.layers().size(); ++i) {
      add(prefix + ".layer" + std::to_string(i) + ".weight", net.layers()[i].weight);
      add(prefix + ".layer" + std::to_string(i) + ".bias", net.layers()[i].bias);
    }
  }
};

std::string assemble(json header, Writer& w) {
  header["tensors"] = w.tensors;
  const std::string h = header.dump();
  std::string out = "MVSC";
  putU(out, 1, 4);
  putU(out, h.size(), 8);
  out += h;
  out += w.data;
  return out;
}

struct Reader {
  const std::string& bytes;
  std::size_t pos;
  const json& tensors;
  std::size_t next = 0;

  Tensor take(const std::string& expected) {
    if (next >= tensors.size()) throw std::runtime_error("checkpoint is missing tensor " + expected);
    const json& t = tensors[next++];
    if (t.at("name").get<std::string>() != expected)
      throw std::runtime_error("checkpoint tensor order mismatch: expected " + expected + ", found " +
                               t.at("name").get<std::string>());
    Tensor out(t.at("shape").get<std::vector<std::size_t>>());
    for (auto& v : out.data) v = std::bit_cast<double>(getU(bytes, pos, 8));
    return out;
  }

  DenseNet net(const std::string& prefix, const json& specs, std::uint64_t seed) {
    std::vector<DenseLayer> layers;
    for (std::size_t i = 0; i < specs.size(); ++i) {
      DenseLayer l;
      l.weight = take(prefix + ".layer" + std::to_string(i) + ".weight");
      l.bias = take(prefix + ".layer" + std::to_string(i) + ".bias");
      l.act = activationFromString(specs[i].at("act").get<std::string>());
      if (l.weight.shape != std::vector<std::size_t>{specs[i].at("out").get<std::size_t>(), specs[i].at("in").get<std::size_t>()})
        throw DimensionError("checkpoint layer " + prefix + std::to_string(i) + " disagrees with its spec");
      layers.push_back(std::move(l));
    }
    return DenseNet(std::move(layers), seed);
  }
};

}  // namespace

ExperimentConfig parseConfig(const json& doc) {
  ExperimentConfig c;
  Section root(doc, "");
  const auto task = root.require<std::string>("task");
  if (task == "classification") c.task = TaskKind::Classification;
  else if (task == "detection") c.task = TaskKind::Detection;
  else throw ConfigError("task", "expected 'classification' or 'detection', got '" + task + "'");
  c.seed = root.require<std::uint64_t>("seed");
  c.outputDir = root.get<std::string>("output_dir", c.outputDir);
  if (c.task == TaskKind::Detection) c.train.batchSize = 1;

  Section world = root.sub("world", true);
  parseWorld(world, c);

  Section net = root.sub("network", false);
  c.taskNet.featureDim = net.get<std::size_t>("feature_dim", c.taskNet.featureDim);
  c.taskNet.featureHidden = net.get<std::vector<std::size_t>>("feature_hidden", c.taskNet.featureHidden);
  c.taskNet.headHidden = net.get<std::vector<std::size_t>>("head_hidden", c.taskNet.headHidden);
  c.selector.hidden = net.get<std::size_t>("selector_hidden", c.selector.hidden);
  c.selector.cameraBranch = net.get<bool>("camera_branch", c.selector.cameraBranch);
  c.selector.featureBranch = net.get<bool>("feature_branch", c.selector.featureBranch);
  net.done();

  Section tr = root.sub("train", true);
  auto& t = c.train;
  t.glances = tr.require<int>("T");
  t.epochs = tr.get<int>("epochs", t.epochs);
  t.selectorEpochs = tr.get<int>("selector_epochs", t.selectorEpochs);
  t.batchSize = tr.get<int>("batch_size", t.batchSize);
  t.taskLr = tr.get<double>("task_lr", t.taskLr);
  t.selectorLr = tr.get<double>("selector_lr", t.selectorLr);
  t.jointTaskLrFactor = tr.get<double>("joint_task_lr_factor", t.jointTaskLrFactor);
  t.gamma = tr.get<double>("gamma", t.gamma);
  t.epsilonStart = tr.get<double>("epsilon_start", t.epsilonStart);
  t.epsilonEnd = tr.get<double>("epsilon_end", t.epsilonEnd);
  t.allowRepeats = tr.get<bool>("allow_repeats", t.allowRepeats);
  t.rlGradToFeatures = tr.get<bool>("rl_grad_to_features", t.rlGradToFeatures);
  t.rewardScale = tr.get<double>("reward_scale", t.rewardScale);
  tr.done();
  t.seed = c.seed;
  t.validate(c.cameras());

  Section ev = root.sub("eval", false);
  c.eval.peakThreshold = ev.get<double>("peak_threshold", c.eval.peakThreshold);
  c.eval.matchThresholdM = ev.get<double>("match_threshold_m", c.eval.matchThresholdM);
  c.eval.oracleMaxSets = ev.get<std::size_t>("oracle_max_sets", c.eval.oracleMaxSets);
  auto& st = c.study;
  st.randomDraws = ev.get<int>("random_draws", st.randomDraws);
  st.tValues = ev.get<std::vector<int>>("T_values", st.tValues);
  st.shutoffK = ev.get<int>("shutoff_k", st.shutoffK);
  st.shutoffRandomSubsets = ev.get<int>("shutoff_random_subsets", st.shutoffRandomSubsets);
  st.retrainTaskForRandomPose = ev.get<bool>("retrain_task_for_random_pose", st.retrainTaskForRandomPose);
  st.permutationRounds = ev.get<int>("permutation_rounds", st.permutationRounds);
  st.measureThroughput = ev.get<bool>("measure_throughput", st.measureThroughput);
  ev.done();
  for (int T : st.tValues)
    if (T < 1 || T > c.cameras()) throw ConfigError("eval.T_values", "every T must lie in [1, N]");
  if (st.randomDraws < 1) throw ConfigError("eval.random_draws", "must be at least 1");
  if (st.shutoffRandomSubsets < 1) throw ConfigError("eval.shutoff_random_subsets", "must be at least 1");
  if (c.sizes.train == 0 || c.sizes.test == 0) throw ConfigError("world.train_instances", "splits must be nonempty");
  root.done();
  return c;
}

ExperimentConfig loadConfig(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("", "cannot open config file " + path.string());
  json doc;
  try {
    doc = json::parse(in);
  } catch (const json::parse_error& e) {
    throw ConfigError("", "config " + path.string() + " is not valid JSON: " + e.what());
  }
  return parseConfig(doc);
}

json worldJson(const ExperimentConfig& c) {
  if (c.task == TaskKind::Classification) {
    const auto& k = c.classification;
    json pairs = json::array();
    for (const auto& p : k.pairs)
      pairs.push_back({{"classes", {p.classA, p.classB}}, {"discriminative_views", p.discriminativeViews}});
    return {{"kind", "classification"}, {"seed", k.seed},         {"cameras", k.cameras},
            {"classes", k.classes},     {"obs_dim", k.obsDim},    {"noise", k.noise},
            {"separation", k.separation}, {"random_pose", k.randomPose}, {"ambiguous_pairs", pairs}};
  }
  const auto& k = c.detection;
  json w{{"kind", "detection"},        {"seed", k.seed},
         {"cameras", k.cameras},       {"height", k.height},
         {"width", k.width},           {"obs_dim", k.channels},
         {"noise", k.noise},           {"min_occupants", k.minOccupants},
         {"max_occupants", k.maxOccupants}, {"occlusion", k.occlusion},
         {"min_coverage", k.minCoverage},   {"cell_size_m", k.cellSizeM},
         {"fov_deg", k.fovDeg},        {"range_fraction", k.rangeFraction},
         {"attenuation", k.attenuation}};
  if (!k.poses.empty()) w["poses"] = posesJson(k.poses);
  return w;
}

json toJson(const ExperimentConfig& c) {
  json world = worldJson(c);
  world.erase("kind");
  world["train_instances"] = c.sizes.train;
  world["val_instances"] = c.sizes.validation;
  world["test_instances"] = c.sizes.test;
  const auto& t = c.train;
  const auto& st = c.study;
  return {{"task", toString(c.task)},
          {"seed", c.seed},
          {"output_dir", c.outputDir},
          {"world", world},
          {"network",
           {{"feature_dim", c.taskNet.featureDim},
            {"feature_hidden", c.taskNet.featureHidden},
            {"head_hidden", c.taskNet.headHidden},
            {"selector_hidden", c.selector.hidden},
            {"camera_branch", c.selector.cameraBranch},
            {"feature_branch", c.selector.featureBranch}}},
          {"train",
           {{"T", t.glances},
            {"epochs", t.epochs},
            {"selector_epochs", t.selectorEpochs},
            {"batch_size", t.batchSize},
            {"task_lr", t.taskLr},
            {"selector_lr", t.selectorLr},
            {"joint_task_lr_factor", t.jointTaskLrFactor},
            {"gamma", t.gamma},
            {"epsilon_start", t.epsilonStart},
            {"epsilon_end", t.epsilonEnd},
            {"allow_repeats", t.allowRepeats},
            {"rl_grad_to_features", t.rlGradToFeatures},
            {"reward_scale", t.rewardScale}}},
          {"eval",
           {{"peak_threshold", c.eval.peakThreshold},
            {"match_threshold_m", c.eval.matchThresholdM},
            {"oracle_max_sets", c.eval.oracleMaxSets},
            {"random_draws", st.randomDraws},
            {"T_values", st.tValues},
            {"shutoff_k", st.shutoffK},
            {"shutoff_random_subsets", st.shutoffRandomSubsets},
            {"retrain_task_for_random_pose", st.retrainTaskForRandomPose},
            {"permutation_rounds", st.permutationRounds},
            {"measure_throughput", st.measureThroughput}}}};
}

std::string sha256Hex(const std::string& bytes) {
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_Digest(bytes.data(), bytes.size(), digest, &len, EVP_sha256(), nullptr) != 1)
    throw std::runtime_error("SHA-256 digest failed");
  std::ostringstream hex;
  for (unsigned int i = 0; i < len; ++i) hex << std::hex << std::setw(2) << std::setfill('0') << static_cast<int>(digest[i]);
  return hex.str();
}

std::string configHash(const ExperimentConfig& config) { return sha256Hex(toJson(config).dump()); }
std::string worldHash(const ExperimentConfig& config) { return sha256Hex(worldJson(config).dump()); }

ExperimentData buildData(const ExperimentConfig& c) {
  ExperimentData d;
  if (c.task == TaskKind::Classification) {
    const ClassificationWorld world(c.classification);
    d.train = materialize(world, Split::Train, c.sizes.train);
    d.validation = materialize(world, Split::Validation, c.sizes.validation);
    d.test = materialize(world, Split::Test, c.sizes.test);
  } else {
    const DetectionWorld world(c.detection);
    d.train = materialize(world, Split::Train, c.sizes.train);
    d.validation = materialize(world, Split::Validation, c.sizes.validation);
    d.test = materialize(world, Split::Test, c.sizes.test);
  }
  return d;
}

TaskNetwork initialTaskNetwork(const ExperimentConfig& c, std::uint64_t seed) {
  const std::uint64_t s = streamSeed(seed, 31, Split::Train, 0);
  if (c.task == TaskKind::Classification)
    return TaskNetwork::classifier(static_cast<std::size_t>(c.classification.obsDim), c.classification.classes,
                                   c.taskNet, s);
  return TaskNetwork::detector(static_cast<std::size_t>(c.detection.channels), c.detection.height, c.detection.width,
                               c.taskNet, s);
}

QNetwork initialSelector(const ExperimentConfig& c, std::size_t featureDim, std::uint64_t seed,
                         std::optional<QNetSpec> spec) {
  return QNetwork(c.cameras(), featureDim, spec.value_or(c.selector), streamSeed(seed, 32, Split::Train, 0));
}

std::string encodeCheckpoint(const TaskNetwork& net, const json& meta) {
  Writer w;
  w.add("feature", net.featureNet);
  w.add("head", net.headNet);
  json header{{"format", "mvselect-checkpoint"},
              {"kind", "task"},
              {"meta", meta},
              {"task_kind", toString(net.kind)},
              {"classes", net.classes},
              {"height", net.height},
              {"width", net.width},
              {"seeds", {{"feature", net.featureNet.seed()}, {"head", net.headNet.seed()}}},
              {"layers", {{"feature", specsJson(net.featureNet)}, {"head", specsJson(net.headNet)}}}};
  return assemble(std::move(header), w);
}

std::string encodeCheckpoint(const QNetwork& net, const json& meta) {
  Writer w;
  w.add("embeddings", net.embeddings);
  w.add("camera_branch", net.cameraBranch);
  w.add("feature_branch", net.featureBranch);
  w.add("combiner", net.combiner);
  json header{{"format", "mvselect-checkpoint"},
              {"kind", "selector"},
              {"meta", meta},
              {"cameras", net.cameras},
              {"feature_dim", net.featureDim},
              {"use_camera_branch", net.useCameraBranch},
              {"use_feature_branch", net.useFeatureBranch},
              {"seeds",
               {{"camera_branch", net.cameraBranch.seed()},
                {"feature_branch", net.featureBranch.seed()},
                {"combiner", net.combiner.seed()}}},
              {"layers",
               {{"camera_branch", specsJson(net.cameraBranch)},
                {"feature_branch", specsJson(net.featureBranch)},
                {"combiner", specsJson(net.combiner)}}}};
  return assemble(std::move(header), w);
}

DecodedCheckpoint decodeCheckpoint(const std::string& bytes) {
  if (bytes.size() < 16 || bytes.compare(0, 4, "MVSC") != 0) throw std::runtime_error("not a checkpoint file");
  std::size_t pos = 4;
  const auto version = getU(bytes, pos, 4);
  if (version != 1) throw std::runtime_error("unsupported checkpoint version " + std::to_string(version));
  const auto headerLen = getU(bytes, pos, 8);
  if (pos + headerLen > bytes.size()) throw std::runtime_error("checkpoint is truncated");
  const json header = json::parse(bytes.substr(pos, headerLen));
  pos += headerLen;

  DecodedCheckpoint out;
  out.kind = header.at("kind").get<std::string>();
  out.meta = header.at("meta");
  Reader r{bytes, pos, header.at("tensors")};
  const json& layers = header.at("layers");
  const json& seeds = header.at("seeds");
  if (out.kind == "task") {
    TaskNetwork net;
    net.kind = header.at("task_kind").get<std::string>() == "detection" ? TaskKind::Detection : TaskKind::Classification;
    net.classes = header.at("classes").get<int>();
    net.height = header.at("height").get<int>();
    net.width = header.at("width").get<int>();
    net.featureNet = r.net("feature", layers.at("feature"), seeds.at("feature").get<std::uint64_t>());
    net.headNet = r.net("head", layers.at("head"), seeds.at("head").get<std::uint64_t>());
    out.task = std::move(net);
  } else if (out.kind == "selector") {
    QNetwork net;
    net.cameras = header.at("cameras").get<int>();
    net.featureDim = header.at("feature_dim").get<std::size_t>();
    net.useCameraBranch = header.at("use_camera_branch").get<bool>();
    net.useFeatureBranch = header.at("use_feature_branch").get<bool>();
    net.embeddings = r.take("embeddings");
    net.cameraBranch = r.net("camera_branch", layers.at("camera_branch"), seeds.at("camera_branch").get<std::uint64_t>());
    net.featureBranch =
        r.net("feature_branch", layers.at("feature_branch"), seeds.at("feature_branch").get<std::uint64_t>());
    net.combiner = r.net("combiner", layers.at("combiner"), seeds.at("combiner").get<std::uint64_t>());
    out.selector = std::move(net);
  } else {
    throw std::runtime_error("unknown checkpoint kind '" + out.kind + "'");
  }
  if (r.pos != bytes.size()) throw std::runtime_error("checkpoint has trailing bytes");
  return out;
}

DecodedCheckpoint readCheckpoint(const std::filesystem::path& path) { return decodeCheckpoint(readFile(path)); }

void checkWorld(const DecodedCheckpoint& ckpt, const std::string& expected) {
  const std::string found = ckpt.meta.value("world_hash", std::string());
  if (found != expected)
    throw CompatibilityError("checkpoint was trained on world " + found + " but the config describes world " + expected);
}

void writeFileAtomic(const std::filesystem::path& path, const std::string& bytes) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  const std::filesystem::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write " + tmp.string());
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    out.flush();
    if (!out) throw std::runtime_error("failed writing " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

std::string readFile(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::string storeObject(const std::filesystem::path& root, const std::string& bytes) {
  const std::string rel = "objects/" + sha256Hex(bytes) + ".ckpt";
  const auto full = root / rel;
  if (!std::filesystem::exists(full)) writeFileAtomic(full, bytes);
  return rel;
}

}  // namespace mvsel
