#include "spl/config.hpp"

#include <fstream>
#include <set>

#include "spl/errors.hpp"

using nlohmann::json;
namespace fs = std::filesystem;

namespace spl::config {

namespace {

json registry_entry_json(const teacher::RegistryEntry& e) {
    return json{{"name", e.name},
                {"weights_path", e.weights_path},
                {"layout", e.layout},
                {"layer", e.layer},
                {"native_stride", e.native_stride},
                {"d", e.d},
                {"input_norm", {{"mean", e.input_norm.mean}, {"std", e.input_norm.std}}}};
}

teacher::RegistryEntry registry_entry_from(const json& j) {
    json base = registry_entry_json(teacher::RegistryEntry{});
    merge_strict(base, j, "teacher.registry[]");
    teacher::RegistryEntry e;
    e.name = base.at("name").get<std::string>();
    e.weights_path = base.at("weights_path").get<std::string>();
    e.layout = base.at("layout").get<std::string>();
    e.layer = base.at("layer").get<int64_t>();
    e.native_stride = base.at("native_stride").get<int64_t>();
    e.d = base.at("d").get<int64_t>();
    e.input_norm.mean = base.at("input_norm").at("mean").get<std::array<double, 3>>();
    e.input_norm.std = base.at("input_norm").at("std").get<std::array<double, 3>>();
    if (e.name.empty()) throw ConfigError("teacher registry entries need a name");
    return e;
}

bool compatible(const json& a, const json& b) {
    if (a.is_number() && b.is_number()) return true;
    return a.type() == b.type();
}

}  // namespace

void TrainConfig::validate() const {
    if (!(lr_finetune < lr_initial)) throw ConfigError("train.lr_finetune must be below train.lr_initial");
    if (decay_epoch < 1) throw ConfigError("train.decay_epoch must be >= 1");
    if (finetune_epochs < 0) throw ConfigError("train.finetune_epochs must be >= 0");
    if (batch_size < 1) throw ConfigError("train.batch_size must be >= 1");
    if (beta1 < 0 || beta1 >= 1 || beta2 < 0 || beta2 >= 1) throw ConfigError("Adam betas must lie in [0, 1)");
    if (log_every < 1) throw ConfigError("train.log_every must be >= 1");
}

void DataConfig::validate() const {
    if (image_size <= 0 || image_size % 4 != 0) {
        throw ConfigError("data.image_size must be a positive multiple of 4 (got " + std::to_string(image_size) + ")");
    }
    if (mask_buckets.empty()) throw ConfigError("data.mask_buckets must not be empty");
    for (const auto& label : mask_buckets) data::bucket_by_label(label);
    if (generated_masks < 0) throw ConfigError("data.generated_masks must be >= 0");
}

bool TeacherConfig::operator==(const TeacherConfig& other) const {
    if (name != other.name || seed != other.seed || alternate != other.alternate ||
        registry.size() != other.registry.size()) {
        return false;
    }
    for (std::size_t i = 0; i < registry.size(); ++i) {
        if (registry_entry_json(registry[i]) != registry_entry_json(other.registry[i])) return false;
    }
    return true;
}

void RunConfig::validate() const {
    model.validate();
    loss.validate();
    train.validate();
    data.validate();
}

RunConfig preset(std::string_view profile) {
    RunConfig c;
    c.train.profile = std::string(profile);
    if (profile == "places2" || profile == "celeba") {
        c.train.decay_epoch = 30;
        c.train.finetune_epochs = 10;
        c.data.center_crop = profile == "celeba";
    } else if (profile == "streetview") {
        c.train.decay_epoch = 50;
        c.train.finetune_epochs = 20;
    } else if (profile == "desk") {
        c.model.c = 64;
        c.model.d = 64;
        c.model.spade_hidden = 32;
        c.model.disc_base = 16;
        c.train.batch_size = 4;
        c.train.decay_epoch = 1000;
        c.train.finetune_epochs = 0;
        c.train.max_steps = 2000;
        c.train.log_every = 10;
        c.data.image_size = 64;
        c.data.mask_buckets = {"10%-20%", "20%-30%"};
        c.data.generated_masks = 64;
    } else {
        throw ConfigError("unknown profile '" + std::string(profile) + "'");
    }
    return c;
}

std::vector<std::string> preset_names() { return {"places2", "celeba", "streetview", "desk"}; }

json to_json(const RunConfig& c) {
    json registry = json::array();
    for (const auto& e : c.teacher.registry) registry.push_back(registry_entry_json(e));
    return json{
        {"model",
         {{"c", c.model.c},
          {"d", c.model.d},
          {"spade_hidden", c.model.spade_hidden},
          {"n_spade_blocks", c.model.n_spade_blocks},
          {"n_prior_blocks", c.model.n_prior_blocks},
          {"disc_base", c.model.disc_base},
          {"use_spade", c.model.use_spade},
          {"use_prior", c.model.use_prior}}},
        {"loss",
         {{"lambda_img", c.loss.lambda_img},
          {"lambda_adv", c.loss.lambda_adv},
          {"lambda_prior", c.loss.lambda_prior},
          {"alpha", c.loss.alpha},
          {"delta", c.loss.delta},
          {"gan_variant", std::string(losses::to_string(c.loss.gan_variant))}}},
        {"train",
         {{"profile", c.train.profile},
          {"lr_initial", c.train.lr_initial},
          {"lr_finetune", c.train.lr_finetune},
          {"beta1", c.train.beta1},
          {"beta2", c.train.beta2},
          {"decay_epoch", c.train.decay_epoch},
          {"finetune_epochs", c.train.finetune_epochs},
          {"batch_size", c.train.batch_size},
          {"max_steps", c.train.max_steps},
          {"seed", c.train.seed},
          {"log_every", c.train.log_every},
          {"checkpoint_every", c.train.checkpoint_every}}},
        {"data",
         {{"image_dir", c.data.image_dir},
          {"mask_dir", c.data.mask_dir},
          {"image_size", c.data.image_size},
          {"center_crop", c.data.center_crop},
          {"fill", c.data.fill},
          {"mask_buckets", c.data.mask_buckets},
          {"generated_masks", c.data.generated_masks},
          {"mask_seed", c.data.mask_seed}}},
        {"teacher",
         {{"name", c.teacher.name},
          {"seed", c.teacher.seed},
          {"alternate", c.teacher.alternate},
          {"registry", registry}}},
        {"eval", {{"composite", c.eval.composite}, {"pairing_seed", c.eval.pairing_seed}}},
    };
}

RunConfig from_json(const json& doc) {
    json full = to_json(preset(doc.contains("train") && doc["train"].contains("profile")
                                   ? doc["train"]["profile"].get<std::string>()
                                   : std::string("places2")));
    merge_strict(full, doc);

    RunConfig c;
    try {
        const auto& m = full.at("model");
        c.model.c = m.at("c").get<int64_t>();
        c.model.d = m.at("d").get<int64_t>();
        c.model.spade_hidden = m.at("spade_hidden").get<int64_t>();
        c.model.n_spade_blocks = m.at("n_spade_blocks").get<int64_t>();
        c.model.n_prior_blocks = m.at("n_prior_blocks").get<int64_t>();
        c.model.disc_base = m.at("disc_base").get<int64_t>();
        c.model.use_spade = m.at("use_spade").get<bool>();
        c.model.use_prior = m.at("use_prior").get<bool>();

        const auto& l = full.at("loss");
        c.loss.lambda_img = l.at("lambda_img").get<double>();
        c.loss.lambda_adv = l.at("lambda_adv").get<double>();
        c.loss.lambda_prior = l.at("lambda_prior").get<double>();
        c.loss.alpha = l.at("alpha").get<double>();
        c.loss.delta = l.at("delta").get<double>();
        c.loss.gan_variant = losses::parse_gan_variant(l.at("gan_variant").get<std::string>());
        c.loss.use_prior = c.model.use_prior;

        const auto& t = full.at("train");
        c.train.profile = t.at("profile").get<std::string>();
        c.train.lr_initial = t.at("lr_initial").get<double>();
        c.train.lr_finetune = t.at("lr_finetune").get<double>();
        c.train.beta1 = t.at("beta1").get<double>();
        c.train.beta2 = t.at("beta2").get<double>();
        c.train.decay_epoch = t.at("decay_epoch").get<int64_t>();
        c.train.finetune_epochs = t.at("finetune_epochs").get<int64_t>();
        c.train.batch_size = t.at("batch_size").get<int64_t>();
        c.train.max_steps = t.at("max_steps").get<int64_t>();
        c.train.seed = t.at("seed").get<uint64_t>();
        c.train.log_every = t.at("log_every").get<int64_t>();
        c.train.checkpoint_every = t.at("checkpoint_every").get<int64_t>();

        const auto& d = full.at("data");
        c.data.image_dir = d.at("image_dir").get<std::string>();
        c.data.mask_dir = d.at("mask_dir").get<std::string>();
        c.data.image_size = d.at("image_size").get<int64_t>();
        c.data.center_crop = d.at("center_crop").get<bool>();
        c.data.fill = d.at("fill").get<double>();
        c.data.mask_buckets = d.at("mask_buckets").get<std::vector<std::string>>();
        c.data.generated_masks = d.at("generated_masks").get<int64_t>();
        c.data.mask_seed = d.at("mask_seed").get<uint64_t>();

        const auto& te = full.at("teacher");
        c.teacher.name = te.at("name").get<std::string>();
        c.teacher.seed = te.at("seed").get<uint64_t>();
        c.teacher.alternate = te.at("alternate").get<std::string>();
        for (const auto& e : te.at("registry")) c.teacher.registry.push_back(registry_entry_from(e));

        const auto& ev = full.at("eval");
        c.eval.composite = ev.at("composite").get<bool>();
        c.eval.pairing_seed = ev.at("pairing_seed").get<uint64_t>();
    } catch (const json::exception& e) {
        throw ConfigError(std::string("invalid configuration value: ") + e.what());
    }
    c.validate();
    return c;
}

void merge_strict(json& base, const json& patch, const std::string& where) {
    if (!patch.is_object()) throw ConfigError("configuration section '" + where + "' must be an object");
    for (const auto& [key, value] : patch.items()) {
        const std::string path = where.empty() ? key : where + "." + key;
        if (!base.contains(key)) throw ConfigError("unknown configuration key '" + path + "'");
        auto& slot = base[key];
        if (slot.is_object()) {
            merge_strict(slot, value, path);
        } else if (!compatible(slot, value)) {
            throw ConfigError("configuration key '" + path + "' expects " + std::string(slot.type_name()) +
                              ", got " + std::string(value.type_name()));
        } else {
            slot = value;
        }
    }
}

void apply_override(json& doc, std::string_view assignment) {
    const auto eq = assignment.find('=');
    if (eq == std::string_view::npos || eq == 0) {
        throw ConfigError("override must look like key=value: '" + std::string(assignment) + "'");
    }
    const std::string key(assignment.substr(0, eq));
    const std::string raw(assignment.substr(eq + 1));
    json value = json::parse(raw, nullptr, /*allow_exceptions=*/false);
    if (value.is_discarded()) value = raw;

    // Build the nested patch a.b.c -> {"a": {"b": {"c": value}}}.
    json patch = value;
    std::size_t end = key.size();
    while (true) {
        const auto dot = key.rfind('.', end - 1);
        const auto start = dot == std::string::npos ? 0 : dot + 1;
        patch = json{{key.substr(start, end - start), patch}};
        if (dot == std::string::npos) break;
        end = dot;
    }
    merge_strict(doc, patch);
}

RunConfig resolve(const fs::path& file, const std::vector<std::string>& overrides, std::string_view profile) {
    json doc = json::object();
    if (!file.empty()) {
        std::ifstream in(file);
        if (!in) throw ConfigError("cannot read configuration file " + file.string());
        try {
            doc = json::parse(in);
        } catch (const json::exception& e) {
            throw ConfigError("configuration file " + file.string() + " is not valid JSON: " + e.what());
        }
    }

    std::string chosen(profile);
    if (doc.contains("train") && doc["train"].contains("profile")) {
        chosen = doc["train"]["profile"].get<std::string>();
    }
    for (const auto& o : overrides) {
        if (o.rfind("train.profile=", 0) == 0) chosen = o.substr(std::string("train.profile=").size());
    }

    json full = to_json(preset(chosen));
    merge_strict(full, doc);
    for (const auto& o : overrides) apply_override(full, o);
    return from_json(full);
}

teacher::Teacher make_teacher(const RunConfig& config) {
    if (config.teacher.name == "standin") {
        return teacher::build_standin_teacher(config.teacher.seed, config.model.d);
    }
    for (const auto& entry : config.teacher.registry) {
        if (entry.name != config.teacher.name) continue;
        if (entry.d != config.model.d) {
            throw ConfigError("teacher '" + entry.name + "' has d = " + std::to_string(entry.d) +
                              " but model.d = " + std::to_string(config.model.d));
        }
        return teacher::load_external_teacher(entry);
    }
    throw ConfigError("teacher '" + config.teacher.name + "' is not registered");
}

}  // namespace spl::config
