#include <algorithm>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "tinv/bytes.hpp"
#include "tinv/classifier.hpp"
#include "tinv/composition.hpp"
#include "tinv/config.hpp"
#include "tinv/datasets.hpp"
#include "tinv/evaluation.hpp"
#include "tinv/textual_inversion.hpp"
#include "tinv/toy_backend.hpp"

namespace fs = std::filesystem;
using namespace tinv;
using nlohmann::json;

namespace {

struct Common {
  std::string config_file;
  std::vector<std::string> overrides;
  bool paper_scale = false;
  std::string backend;
};

RunConfig resolve_config(const Common& common, const std::map<std::string, std::string>& flags) {
  RunConfig cfg = default_config(common.paper_scale);
  if (!common.config_file.empty()) cfg.merge(RunConfig::load(common.config_file), true);
  RunConfig layer;
  for (const auto& kv : common.overrides) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos) throw ConfigError("--set expects key=value, got '" + kv + "'");
    layer.set(kv.substr(0, eq), kv.substr(eq + 1));
  }
  for (const auto& [k, v] : flags) layer.set(k, v);
  cfg.merge(layer, true);
  if (!common.backend.empty()) cfg.set("backend.path", common.backend);
  return cfg;
}

/// Relative input paths are taken from TINV_DATA_ROOT when it is set.
fs::path data_path(const std::string& p) {
  const fs::path path(p);
  if (path.is_absolute()) return path;
  if (const char* root = std::getenv("TINV_DATA_ROOT"); root && *root) return fs::path(root) / path;
  return path;
}

ScheduleParams schedule_params(const RunConfig& cfg) {
  return {static_cast<int>(cfg.get_int("schedule.steps")), cfg.get_double("schedule.sigma_min"),
          cfg.get_double("schedule.sigma_max"), cfg.get_double("schedule.rho")};
}

ToyBackend open_backend(const RunConfig& cfg) {
  std::string path = cfg.get("backend.path");
  if (path.empty()) path = data_path("tinv-base.tibk").string();
  PretrainConfig pc;
  pc.steps = static_cast<int>(cfg.get_int("backend.pretrain_steps"));
  pc.seed = cfg.get_uint("backend.seed");
  if (!fs::exists(path)) std::cerr << "pretraining base model into " << path << "\n";
  ToyBackend backend = load_or_pretrain_backend(path, pc, [&](int step, double loss) {
    if ((step + 1) % 250 == 0) std::cerr << "  pretrain step " << step + 1 << "/" << pc.steps << " loss " << loss << "\n";
  });
  backend.denoiser.set_frozen(true);
  return backend;
}

void write_text(const fs::path& path, const std::string& text) {
  bytes::write_file(path, std::vector<std::uint8_t>(text.begin(), text.end()));
}

std::string read_text(const fs::path& path) {
  const auto data = bytes::read_file(path);
  return std::string(data.begin(), data.end());
}

std::vector<double> parse_doubles(const std::string& list) {
  std::vector<double> out;
  std::stringstream ss(list);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (item.empty()) continue;
    std::size_t used = 0;
    const double v = std::stod(item, &used);
    if (used != item.size()) throw std::invalid_argument("bad number '" + item + "'");
    out.push_back(v);
  }
  return out;
}

std::vector<int> parse_ints(const std::string& list) {
  std::vector<int> out;
  for (const double v : parse_doubles(list)) {
    if (v != static_cast<int>(v)) throw std::invalid_argument("expected an integer list: " + list);
    out.push_back(static_cast<int>(v));
  }
  return out;
}

std::string seed_name(std::uint64_t seed) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "sample-%05llu.png", static_cast<unsigned long long>(seed));
  return buf;
}

std::string format_weight(double w) {
  std::ostringstream os;
  os << w;
  return os.str();
}

/// Samples `count` images with seeds seed0 .. seed0 + count - 1; writes each
/// and a grid, and a manifest flagging them synthetic with `label`.
std::vector<Image> generate_set(const ToyBackend& backend, const NoiseSchedule& schedule,
                                const GuidanceSpec<float>& guidance, std::uint64_t seed0, int count,
                                const fs::path& out, const std::string& id_prefix, std::optional<Label> label) {
  fs::create_directories(out);
  std::vector<Image> images;
  DatasetManifest manifest;
  manifest.name = id_prefix;
  for (int i = 0; i < count; ++i) {
    const std::uint64_t seed = seed0 + static_cast<std::uint64_t>(i);
    const Image image = quantize(latent_to_image(sample(backend.denoiser, schedule, guidance, seed, backend.image_shape())));
    write_png(out / seed_name(seed), image);
    images.push_back(image);
    if (label) {
      SliceRecord r;
      r.id = id_prefix + "-" + std::to_string(seed);
      r.path = out / seed_name(seed);
      r.label = *label;
      r.dataset = id_prefix;
      r.synthetic = true;
      r.note = "seed=" + std::to_string(seed);
      manifest.records.push_back(std::move(r));
    }
  }
  write_png(out / "grid.png", make_grid(images, std::min<Index>(count, 10)));
  if (label) write_manifest(manifest, out / "manifest.jsonl");
  return images;
}

std::vector<LatentTensor> latents_for(const DatasetManifest& manifest, std::optional<Label> label, int max_cases) {
  std::vector<LatentTensor> out;
  for (const auto& r : manifest.records) {
    if (label && r.label != *label) continue;
    if (max_cases > 0 && static_cast<int>(out.size()) >= max_cases) break;
    out.push_back(image_to_latent(read_png(r.path)));
  }
  if (out.empty()) throw std::invalid_argument("no training images selected from the manifest");
  return out;
}

TIConfig ti_config(const RunConfig& cfg) {
  TIConfig tc;
  tc.learning_rate = cfg.get_double("ti.learning_rate");
  tc.steps = static_cast<int>(cfg.get_int("ti.steps"));
  tc.batch_size = static_cast<int>(cfg.get_int("ti.batch_size"));
  tc.n_vectors = static_cast<int>(cfg.get_int("ti.vectors"));
  tc.seed = cfg.get_uint("ti.seed");
  tc.checkpoint_every = static_cast<int>(cfg.get_int("ti.checkpoint_every"));
  tc.keep_checkpoints = static_cast<int>(cfg.get_int("ti.keep_checkpoints"));
  tc.schedule = schedule_params(cfg);
  return tc;
}

ConceptEmbedding run_ti(const ToyBackend& backend, const std::vector<LatentTensor>& data, const TIConfig& tc,
                        const std::string& name, const fs::path& out) {
  TrainingState state;
  const ConceptEmbedding e = train_embedding(data, tc, backend.denoiser, backend.conditioner, name, &state,
                                             [&](const TrainingState& s) {
                                               if (s.step % 500 == 0) {
                                                 std::cerr << "  " << name << " step " << s.step << " loss EMA "
                                                           << s.loss_ema << "\n";
                                               }
                                             });
  fs::create_directories(out);
  save_embedding(e, out / (name + kEmbeddingExtension));
  json curve = json::array();
  for (const auto& [step, ema] : state.ema_history) curve.push_back({{"step", step}, {"loss_ema", ema}});
  json meta(e.metadata);
  write_text(out / (name + ".json"), json{{"name", name}, {"metadata", meta}, {"loss_ema", curve}}.dump(2) + "\n");
  for (const auto& ck : state.checkpoints) {
    ConceptEmbedding snap = e;
    snap.vectors = ck.vectors;
    save_embedding(snap, out / "checkpoints" / (name + "-step" + std::to_string(ck.step) + kEmbeddingExtension));
  }
  return e;
}

GuidanceSpec<float> guidance_for(const ComposedPrompt& prompt, const EmbeddingRegistry& registry,
                                 const ToyBackend& backend, const RunConfig& cfg) {
  return to_guidance(prompt, registry, backend.conditioner,
                     CfgPolicy{cfg.get_double("sampler.cfg_scale"), cfg.get_double("sampler.multi_concept_cfg_scale")});
}

std::vector<Image> load_manifest_images(const fs::path& path, std::optional<Label> label) {
  std::vector<Image> out;
  for (const auto& r : read_manifest(path).records) {
    if (!label || r.label == *label) out.push_back(read_png(r.path));
  }
  return out;
}

std::optional<Label> optional_label(const std::string& s) {
  if (s.empty()) return std::nullopt;
  return parse_label(s);
}

std::string fid_table(const std::vector<std::string>& headers, const std::vector<std::vector<std::string>>& rows) {
  std::string out = "|";
  for (const auto& h : headers) out += " " + h + " |";
  out += "\n|";
  for (std::size_t i = 0; i < headers.size(); ++i) out += "---|";
  out += "\n";
  for (const auto& row : rows) {
    out += "|";
    for (const auto& c : row) out += " " + c + " |";
    out += "\n";
  }
  return out;
}

std::string fixed(double v, int digits) {
  std::ostringstream os;
  os.setf(std::ios::fixed);
  os.precision(digits);
  os << v;
  return os.str();
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Textual inversion toolkit: embeddings, guided sampling, composition, inpainting, FID and "
               "classifier augmentation studies"};
  app.require_subcommand(1);
  Common common;
  app.add_option("--config", common.config_file, "Key-value config file layered over the defaults");
  app.add_option("--set", common.overrides, "Override a config key (key=value), repeatable");
  app.add_flag("--paper-scale", common.paper_scale, "Use the paper's step/batch/sample counts");
  app.add_option("--backend", common.backend, "Base model file (pretrained and cached if missing)");

  std::string out;
  std::map<std::string, std::string> flags;
  const auto flag = [&](CLI::App* cmd, const std::string& name, const std::string& key, const std::string& help) {
    return cmd->add_option_function<std::string>(name, [&flags, key](const std::string& v) { flags[key] = v; }, help);
  };

  // pretrain-base
  auto* pretrain = app.add_subcommand("pretrain-base", "Train and cache the toy base model");
  pretrain->add_option("--out", out, "Output model file")->required();
  flag(pretrain, "--steps", "backend.pretrain_steps", "Pretraining steps");
  flag(pretrain, "--seed", "backend.seed", "Pretraining seed");

  // toy-data
  auto* toy = app.add_subcommand("toy-data", "Render the synthetic toy dataset");
  std::size_t toy_n = 100;
  std::uint64_t toy_seed = 0;
  std::string toy_name = "toy";
  toy->add_option("--out", out, "Output directory")->required();
  toy->add_option("--n-per-class", toy_n, "Cases per class");
  toy->add_option("--seed", toy_seed, "Seed");
  toy->add_option("--name", toy_name, "Dataset name and id prefix");

  // preprocess
  auto* prep = app.add_subcommand("preprocess", "Preprocess source data into 512x512 slices and a manifest");
  std::string prep_dataset, prep_input;
  std::size_t n_train = 0, n_val = 0, n_test = 0;
  std::uint64_t split_seed = 0;
  prep->add_option("--dataset", prep_dataset, "picai | chexpert | pcam")->required();
  prep->add_option("--input", prep_input,
                   "picai: directory of case folders; chexpert/pcam: CSV of path,label[,id]")->required();
  prep->add_option("--out", out, "Output directory")->required();
  prep->add_option("--train", n_train, "Training cases per class (0 = no split)");
  prep->add_option("--val", n_val, "Validation cases per class");
  prep->add_option("--test", n_test, "Test cases per class");
  prep->add_option("--split-seed", split_seed, "Split seed");

  // train-embedding
  auto* train = app.add_subcommand("train-embedding", "Learn a concept embedding on a frozen backend");
  std::string manifest_path, name, label_str;
  int max_cases = 0;
  train->add_option("--manifest", manifest_path, "Training manifest")->required();
  train->add_option("--name", name, "Concept name")->required();
  train->add_option("--label", label_str, "Only use records with this label (positive|negative)");
  train->add_option("--cases", max_cases, "Use at most this many cases (0 = all)");
  train->add_option("--out", out, "Output directory")->required();
  flag(train, "--vectors", "ti.vectors", "Vectors per token");
  flag(train, "--steps", "ti.steps", "Optimizer steps");
  flag(train, "--lr", "ti.learning_rate", "Learning rate");
  flag(train, "--seed", "ti.seed", "Seed");

  // generate
  auto* gen = app.add_subcommand("generate", "Sample images for one concept");
  std::string emb_dir, concept_name;
  int count = 0;
  gen->add_option("--embeddings", emb_dir, "Directory of .emb files")->required();
  gen->add_option("--concept", concept_name, "Concept name")->required();
  gen->add_option("--n", count, "Number of samples (default sampler.samples)");
  gen->add_option("--label", label_str, "Label to record in the output manifest");
  gen->add_option("--out", out, "Output directory")->required();
  flag(gen, "--seed", "sampler.seed", "First seed");
  flag(gen, "--steps", "schedule.steps", "Sampling steps");
  flag(gen, "--cfg", "sampler.cfg_scale", "CFG scale");

  // compose
  auto* compose = app.add_subcommand("compose", "Sample from a weighted AND prompt");
  std::string prompt_text;
  std::optional<double> cfg_override;
  compose->add_option("--embeddings", emb_dir, "Directory of .emb files")->required();
  compose->add_option("--prompt", prompt_text, "e.g. \"0.5*<a> AND 0.5*<b>\"")->required();
  compose->add_option("--cfg", cfg_override, "CFG scale (overrides the multi-concept default)");
  compose->add_option("--n", count, "Number of samples (default sampler.samples)");
  compose->add_option("--out", out, "Output directory")->required();
  flag(compose, "--seed", "sampler.seed", "First seed");

  // interpolate
  auto* interp = app.add_subcommand("interpolate", "Sweep the weight between two concepts");
  std::string from_name, to_name, alphas_text = "0,0.25,0.5,0.75,1";
  interp->add_option("--embeddings", emb_dir, "Directory of .emb files")->required();
  interp->add_option("--from", from_name, "Concept at alpha = 0")->required();
  interp->add_option("--to", to_name, "Concept at alpha = 1")->required();
  interp->add_option("--alphas", alphas_text, "Comma-separated alphas in [0, 1]");
  interp->add_option("--n", count, "Seeds per alpha (default 1)");
  interp->add_option("--out", out, "Output directory")->required();
  flag(interp, "--seed", "sampler.seed", "First seed");

  // inpaint
  auto* inp = app.add_subcommand("inpaint", "Regenerate a masked region under a concept");
  std::string reference_path, mask_path;
  inp->add_option("--embeddings", emb_dir, "Directory of .emb files")->required();
  inp->add_option("--reference", reference_path, "Reference PNG")->required();
  inp->add_option("--mask", mask_path, "Mask PNG (>= 128 regenerates)")->required();
  inp->add_option("--concept", concept_name, "Concept name")->required();
  inp->add_option("--n", count, "Number of seeds (default 1)");
  inp->add_option("--out", out, "Output directory")->required();
  flag(inp, "--seed", "sampler.seed", "First seed");

  // fid
  auto* fidc = app.add_subcommand("fid", "FID between a real manifest and a directory of PNGs");
  std::string generated_dir, stats_cache;
  fidc->add_option("--real", manifest_path, "Real manifest")->required();
  fidc->add_option("--generated", generated_dir, "Directory of generated PNGs")->required();
  fidc->add_option("--label", label_str, "Only use real records with this label");
  fidc->add_option("--cache", stats_cache, "Stats cache for the real set (read if valid, else written)");
  fidc->add_option("--out", out, "Write the JSON report here");
  flag(fidc, "--extractor", "fid.extractor", "Feature extractor id");

  // sweep-inference
  auto* sweep_inf = app.add_subcommand("sweep-inference", "FID over a grid of sampling steps and CFG scales");
  std::string cells_text = "25x2,50x2,75x2,100x2,100x1,100x3,100x4,100x5";
  sweep_inf->add_option("--embeddings", emb_dir, "Directory of .emb files")->required();
  sweep_inf->add_option("--concept", concept_name, "Concept name")->required();
  sweep_inf->add_option("--real", manifest_path, "Real manifest")->required();
  sweep_inf->add_option("--label", label_str, "Only use real records with this label");
  sweep_inf->add_option("--cells", cells_text, "Comma-separated STEPSxCFG cells");
  sweep_inf->add_option("--n", count, "Samples per cell (default sampler.samples)");
  sweep_inf->add_option("--out", out, "Output directory")->required();

  // sweep-embedding
  auto* sweep_emb = app.add_subcommand("sweep-embedding", "FID over embedding sizes and training-case counts");
  std::string sizes_text, cases_text;
  sweep_emb->add_option("--manifest", manifest_path, "Training manifest")->required();
  sweep_emb->add_option("--label", label_str, "Label of the concept being learned")->required();
  sweep_emb->add_option("--real", generated_dir, "Real manifest for FID (defaults to --manifest)");
  sweep_emb->add_option("--sizes", sizes_text, "Vectors-per-token values, e.g. 8,16,32,64");
  sweep_emb->add_option("--cases", cases_text, "Training-case counts, e.g. 5,10,50,100");
  sweep_emb->add_option("--n", count, "Samples per setting (default sampler.samples)");
  sweep_emb->add_option("--out", out, "Output directory")->required();

  // train-classifier
  auto* clf = app.add_subcommand("train-classifier", "Train classifiers on a real/synthetic mix");
  std::string train_manifest, val_manifest, test_manifest, synth_manifest, mix_text = "real=200,synth=0";
  clf->add_option("--train", train_manifest, "Real training manifest")->required();
  clf->add_option("--val", val_manifest, "Validation manifest")->required();
  clf->add_option("--test", test_manifest, "Test manifest")->required();
  clf->add_option("--synthetic", synth_manifest, "Synthetic manifest (records flagged synthetic)");
  clf->add_option("--mix", mix_text, "Total cases, e.g. real=200,synth=2000 (split evenly by class)");
  clf->add_option("--out", out, "Output directory")->required();
  flag(clf, "--repeats", "classifier.repeats", "Seeded repeats");
  flag(clf, "--batches", "classifier.batches", "Training batches");
  flag(clf, "--lr", "classifier.learning_rate", "Learning rate");

  // report
  auto* rep = app.add_subcommand("report", "Consolidate run directories into one markdown report");
  std::vector<std::string> run_dirs;
  rep->add_option("--runs", run_dirs, "Run directories")->required();
  rep->add_option("--out", out, "Report file")->required();

  CLI11_PARSE(app, argc, argv);

  try {
    const RunConfig cfg = resolve_config(common, flags);
    const auto persist = [&](const fs::path& dir) {
      fs::create_directories(dir);
      cfg.persist(dir);
    };

    if (*pretrain) {
      PretrainConfig pc;
      pc.steps = static_cast<int>(cfg.get_int("backend.pretrain_steps"));
      pc.seed = cfg.get_uint("backend.seed");
      const ToyBackend backend = pretrain_toy_backend(pc, [&](int step, double loss) {
        if ((step + 1) % 250 == 0) std::cerr << "step " << step + 1 << " loss " << loss << "\n";
      });
      save_backend(backend, out);
      std::cout << "parameter hash " << parameter_hash(backend.denoiser, backend.conditioner) << "\n";
    } else if (*toy) {
      persist(out);
      const ToyDataset ds = toy_generate(toy_n, toy_seed, ToyStyle{}, fs::path(out), toy_name);
      std::cout << "wrote " << ds.manifest.records.size() << " records, manifest hash "
                << manifest_hash(ds.manifest) << "\n";
    } else if (*prep) {
      persist(out);
      DatasetManifest manifest;
      manifest.name = prep_dataset;
      const fs::path input = data_path(prep_input);
      std::string prep_config;
      if (prep_dataset == "picai") {
        const PicaiConfig pc;
        prep_config = "picai;spacing=3,0.5,0.5;crop=90,150,150;size=512;percentiles=0.5,99.5";
        std::vector<fs::path> cases;
        for (const auto& e : fs::directory_iterator(input)) {
          if (e.is_directory()) cases.push_back(e.path());
        }
        std::sort(cases.begin(), cases.end());
        for (const auto& dir : cases) {
          const VolumeCase c = read_volume_case(dir);
          const PicaiResult r = picai_extract(c, pc);
          const fs::path img = fs::path(out) / "images" / (c.id + ".png");
          write_png(img, r.image);
          manifest.records.push_back({c.id, img, c.label, Split::Unassigned, "picai", "", false,
                                      "R=T2W,G=ADC,B=DWI;slice=" + std::to_string(r.slice)});
        }
      } else if (prep_dataset == "chexpert" || prep_dataset == "pcam") {
        prep_config = prep_dataset + ";size=512";
        std::ifstream in(input);
        if (!in) throw std::runtime_error("cannot read " + input.string());
        std::string line;
        while (std::getline(in, line)) {
          if (line.empty() || line[0] == '#') continue;
          std::vector<std::string> fields;
          std::stringstream ss(line);
          std::string f;
          while (std::getline(ss, f, ',')) fields.push_back(f);
          if (fields.size() < 2) throw std::runtime_error("expected path,label[,id]: " + line);
          const fs::path src = fields[0].front() == '/' ? fs::path(fields[0]) : input.parent_path() / fields[0];
          const std::string id = fields.size() > 2 ? fields[2] : src.stem().string();
          Image image = read_png(src);
          if (prep_dataset == "chexpert") {
            Image gray(Shape{1, image.height(), image.width()});
            gray.data() = image.data().colwise().mean();
            image = chexpert_preprocess(gray);
          } else {
            image = pcam_preprocess(image);
          }
          const fs::path img = fs::path(out) / "images" / (id + ".png");
          write_png(img, image);
          manifest.records.push_back({id, img, parse_label(fields[1]), Split::Unassigned, prep_dataset, "", false, ""});
        }
      } else {
        throw std::invalid_argument("unknown dataset '" + prep_dataset + "' (picai | chexpert | pcam)");
      }
      manifest.config_hash = bytes::sha256_hex(prep_config);
      for (auto& r : manifest.records) r.config_hash = manifest.config_hash;
      if (n_train + n_val + n_test > 0) manifest = split_manifest(manifest, {n_train, n_val, n_test}, split_seed);
      write_manifest(manifest, fs::path(out) / "manifest.jsonl");
      std::cout << "wrote " << manifest.records.size() << " records\n";
    } else if (*train) {
      persist(out);
      const auto data = latents_for(read_manifest(data_path(manifest_path)), optional_label(label_str), max_cases);
      const ToyBackend backend = open_backend(cfg);
      const ConceptEmbedding e = run_ti(backend, data, ti_config(cfg), name, out);
      std::cout << "saved " << (fs::path(out) / (name + kEmbeddingExtension)).string() << " ("
                << serialized_embedding_size(e) << " bytes)\n";
    } else if (*gen || *compose) {
      persist(out);
      const auto registry = EmbeddingRegistry::load_dir(emb_dir);
      ComposedPrompt prompt = *gen ? parse_prompt("<" + concept_name + ">", registry) : parse_prompt(prompt_text, registry);
      const ToyBackend backend = open_backend(cfg);
      if (cfg_override) prompt.cfg_scale = *cfg_override;
      const int n = count > 0 ? count : static_cast<int>(cfg.get_int("sampler.samples"));
      write_text(fs::path(out) / "prompt.txt", format_prompt(prompt) + "\n");
      generate_set(backend, build_schedule(schedule_params(cfg)), guidance_for(prompt, registry, backend, cfg),
                   cfg.get_uint("sampler.seed"), n, out, *gen ? concept_name : "composed",
                   *gen ? optional_label(label_str) : std::nullopt);
    } else if (*interp) {
      persist(out);
      const auto registry = EmbeddingRegistry::load_dir(emb_dir);
      const auto alphas = parse_doubles(alphas_text);
      const auto prompts = interpolation_sweep(from_name, to_name, alphas);
      for (const auto& name : {from_name, to_name}) registry.get(name);
      const ToyBackend backend = open_backend(cfg);
      const NoiseSchedule schedule = build_schedule(schedule_params(cfg));
      const int n = count > 0 ? count : 1;
      const std::uint64_t seed0 = cfg.get_uint("sampler.seed");
      std::vector<Image> grid;
      for (int s = 0; s < n; ++s) {
        for (std::size_t a = 0; a < prompts.size(); ++a) {
          const auto guidance = guidance_for(prompts[a], registry, backend, cfg);
          const std::uint64_t seed = seed0 + static_cast<std::uint64_t>(s);
          const Image image = quantize(latent_to_image(sample(backend.denoiser, schedule, guidance, seed, backend.image_shape())));
          write_png(fs::path(out) / ("alpha-" + format_weight(alphas[a]) + "-" + seed_name(seed)), image);
          grid.push_back(image);
        }
      }
      write_png(fs::path(out) / "grid.png", make_grid(grid, static_cast<Index>(prompts.size())));
    } else if (*inp) {
      persist(out);
      const auto registry = EmbeddingRegistry::load_dir(emb_dir);
      const auto prompt = parse_prompt("<" + concept_name + ">", registry);
      const Image reference = read_png(data_path(reference_path));
      const InpaintMask mask{mask_from_image(read_png(data_path(mask_path))), image_to_latent(reference)};
      mask.validate();
      const ToyBackend backend = open_backend(cfg);
      const auto guidance = guidance_for(prompt, registry, backend, cfg);
      const NoiseSchedule schedule = build_schedule(schedule_params(cfg));
      Image mask_view = mask.mask;
      mask_view.data() *= 255.0f;
      if (reference.channels() != 1) mask_view = Image(reference.shape(), mask_view.data().replicate(reference.channels(), 1));
      std::vector<Image> grid{reference, mask_view};
      const int n = count > 0 ? count : 1;
      for (int s = 0; s < n; ++s) {
        const std::uint64_t seed = cfg.get_uint("sampler.seed") + static_cast<std::uint64_t>(s);
        const Image image = quantize(latent_to_image(inpaint(backend.denoiser, schedule, guidance, mask, seed)));
        write_png(fs::path(out) / seed_name(seed), image);
        grid.push_back(image);
      }
      write_png(fs::path(out) / "grid.png", make_grid(grid, static_cast<Index>(grid.size())));
    } else if (*fidc) {
      const auto extractor = make_extractor(cfg.get("fid.extractor"));
      const DatasetManifest real = read_manifest(data_path(manifest_path));
      const auto label = optional_label(label_str);
      const std::string source = manifest_hash(real) + ";label=" + label_str;
      GaussianStats<double> real_stats;
      bool cached = false;
      if (!stats_cache.empty() && fs::exists(stats_cache)) {
        const CachedStats c = load_stats(stats_cache);
        if (c.extractor_id == extractor->id() && c.source_hash == source) {
          real_stats = c.stats;
          cached = true;
        }
      }
      if (!cached) {
        real_stats = compute_stats(load_manifest_images(data_path(manifest_path), label), *extractor);
        if (!stats_cache.empty()) save_stats(stats_cache, real_stats, extractor->id(), source);
      }
      const auto generated = load_png_dir(generated_dir);
      FidReport report;
      report.fid = frechet_distance(real_stats, compute_stats(generated, *extractor));
      report.n_real = real_stats.n;
      report.n_generated = static_cast<Index>(generated.size());
      report.extractor_id = extractor->id();
      report.feature_dim = extractor->feature_dim();
      std::cout << report.to_json() << "\n";
      if (!out.empty()) write_text(out, report.to_json() + "\n");
    } else if (*sweep_inf) {
      persist(out);
      const ToyBackend backend = open_backend(cfg);
      const auto registry = EmbeddingRegistry::load_dir(emb_dir);
      const auto extractor = make_extractor(cfg.get("fid.extractor"));
      const auto real_stats = compute_stats(load_manifest_images(data_path(manifest_path), optional_label(label_str)), *extractor);
      std::vector<std::pair<int, double>> cells;
      std::stringstream ss(cells_text);
      std::string cell;
      while (std::getline(ss, cell, ',')) {
        const auto x = cell.find('x');
        if (x == std::string::npos) throw std::invalid_argument("cell must be STEPSxCFG: " + cell);
        cells.emplace_back(std::stoi(cell.substr(0, x)), std::stod(cell.substr(x + 1)));
      }
      if (cells.empty()) throw std::invalid_argument("empty grid");
      const int n = count > 0 ? count : static_cast<int>(cfg.get_int("sampler.samples"));
      std::map<std::pair<int, double>, double> computed;
      std::vector<std::vector<std::string>> rows;
      std::vector<Image> strip;
      for (const auto& c : cells) {
        if (!computed.count(c)) {
          ScheduleParams sp = schedule_params(cfg);
          sp.steps = c.first;
          ComposedPrompt prompt = parse_prompt("<" + concept_name + ">", registry);
          prompt.cfg_scale = c.second;
          const fs::path dir = fs::path(out) / ("steps" + std::to_string(c.first) + "-cfg" + format_weight(c.second));
          const auto images = generate_set(backend, build_schedule(sp), guidance_for(prompt, registry, backend, cfg),
                                            cfg.get_uint("sampler.seed"), n, dir, concept_name, std::nullopt);
          computed[c] = frechet_distance(real_stats, compute_stats(images, *extractor));
          strip.push_back(images.front());
        }
        rows.push_back({std::to_string(c.first), format_weight(c.second), fixed(computed[c], 3)});
      }
      const std::string table = fid_table({"Steps", "CFG scale", "FID"}, rows);
      write_text(fs::path(out) / "table.md", table);
      write_png(fs::path(out) / "grid.png", make_grid(strip, static_cast<Index>(strip.size())));
      std::cout << table;
    } else if (*sweep_emb) {
      persist(out);
      const auto sizes = parse_ints(sizes_text);
      const auto case_counts = parse_ints(cases_text);
      if (sizes.empty() && case_counts.empty()) throw std::invalid_argument("empty grid: give --sizes and/or --cases");
      const ToyBackend backend = open_backend(cfg);
      const Label label = parse_label(label_str);
      const DatasetManifest manifest = read_manifest(data_path(manifest_path));
      const auto extractor = make_extractor(cfg.get("fid.extractor"));
      const fs::path real_path = generated_dir.empty() ? data_path(manifest_path) : data_path(generated_dir);
      const auto real_stats = compute_stats(load_manifest_images(real_path, label), *extractor);
      const NoiseSchedule schedule = build_schedule(schedule_params(cfg));
      const int n = count > 0 ? count : static_cast<int>(cfg.get_int("sampler.samples"));
      const auto run = [&](int vectors, int cases, const std::string& tag) {
        TIConfig tc = ti_config(cfg);
        tc.n_vectors = vectors;
        const fs::path dir = fs::path(out) / tag;
        const ConceptEmbedding e = run_ti(backend, latents_for(manifest, label, cases), tc, "concept", dir);
        EmbeddingRegistry registry;
        registry.add(e);
        const auto guidance = guidance_for(parse_prompt("<concept>", registry), registry, backend, cfg);
        const auto images = generate_set(backend, schedule, guidance, cfg.get_uint("sampler.seed"), n, dir / "samples",
                                         tag, std::nullopt);
        return frechet_distance(real_stats, compute_stats(images, *extractor));
      };
      const int default_vectors = static_cast<int>(cfg.get_int("ti.vectors"));
      if (!sizes.empty()) {
        std::vector<std::vector<std::string>> rows;
        for (const int s : sizes) rows.push_back({std::to_string(s), fixed(run(s, 0, "size" + std::to_string(s)), 3)});
        const std::string table = fid_table({"Embedding size", "FID"}, rows);
        write_text(fs::path(out) / "table_sizes.md", table);
        std::cout << table;
      }
      if (!case_counts.empty()) {
        std::vector<std::vector<std::string>> rows;
        for (const int c : case_counts) {
          rows.push_back({std::to_string(c), fixed(run(default_vectors, c, "cases" + std::to_string(c)), 3)});
        }
        const std::string table = fid_table({"Training cases", "FID"}, rows);
        write_text(fs::path(out) / "table_cases.md", table);
        std::cout << table;
      }
    } else if (*clf) {
      persist(out);
      std::size_t real_total = 0, synth_total = 0;
      {
        std::stringstream ss(mix_text);
        std::string part;
        while (std::getline(ss, part, ',')) {
          const auto eq = part.find('=');
          if (eq == std::string::npos) throw std::invalid_argument("--mix expects real=N,synth=M");
          const std::string key = part.substr(0, eq);
          const auto value = static_cast<std::size_t>(std::stoull(part.substr(eq + 1)));
          if (key == "real") real_total = value;
          else if (key == "synth") synth_total = value;
          else throw std::invalid_argument("unknown mix key '" + key + "'");
        }
      }
      if (real_total % 2 || synth_total % 2) throw std::invalid_argument("mix totals must be even (balanced classes)");
      const DatasetManifest real = read_manifest(data_path(train_manifest));
      const DatasetManifest synth = synth_manifest.empty() ? DatasetManifest{} : read_manifest(data_path(synth_manifest));
      const LabeledSet val = load_labeled_set(read_manifest(data_path(val_manifest)).records);
      const LabeledSet test = load_labeled_set(read_manifest(data_path(test_manifest)).records);
      ClassifierConfig cc;
      cc.learning_rate = cfg.get_double("classifier.learning_rate");
      cc.total_batches = static_cast<int>(cfg.get_int("classifier.batches"));
      cc.batch_size = static_cast<int>(cfg.get_int("classifier.batch_size"));
      cc.val_every = static_cast<int>(cfg.get_int("classifier.val_every"));
      cc.input_size = cfg.get_int("classifier.input_size");
      cc.width = cfg.get_int("classifier.width");
      const int repeats = static_cast<int>(cfg.get_int("classifier.repeats"));
      std::vector<double> aucs;
      for (int r = 0; r < repeats; ++r) {
        cc.seed = cfg.get_uint("classifier.seed") + static_cast<std::uint64_t>(r);
        const DatasetManifest mix = build_mix({real_total / 2, synth_total / 2}, real, synth, cc.seed);
        const TrainReport report = train_classifier(load_labeled_set(mix.records), val, test, cc);
        write_text(fs::path(out) / ("run-" + std::to_string(r) + ".json"), report.to_json() + "\n");
        aucs.push_back(report.test_auc);
        std::cerr << "repeat " << r << " test AUC " << report.test_auc << "\n";
      }
      const AucSummary s = summarize(aucs);
      const std::string table = study_table({{std::to_string(real_total), std::to_string(synth_total), s}});
      write_text(fs::path(out) / "table.md", table);
      write_text(fs::path(out) / "summary.json",
                 json{{"real", real_total}, {"synthetic", synth_total}, {"test_auc", aucs},
                      {"mean", s.mean}, {"std", s.stddev}, {"config_hash", cfg.hash()}}.dump(2) + "\n");
      std::cout << table;
    } else if (*rep) {
      if (run_dirs.empty()) throw std::invalid_argument("no run directories given");
      std::string md = "# Run report\n";
      std::vector<StudyRow> study;
      for (const auto& d : run_dirs) {
        const fs::path dir(d);
        if (!fs::exists(dir / "config.sha256")) throw std::runtime_error("missing run artifacts in " + d);
        md += "\n## " + dir.filename().string() + "\n\nconfig sha256: `" + read_text(dir / "config.sha256").substr(0, 64) + "`\n";
        std::vector<fs::path> files;
        for (const auto& e : fs::directory_iterator(dir)) {
          if (e.is_regular_file()) files.push_back(e.path());
        }
        std::sort(files.begin(), files.end());
        for (const auto& f : files) {
          if (f.extension() == ".md") {
            md += "\n" + read_text(f);
          } else if (f.filename() == "grid.png") {
            md += "\n![grid](" + f.string() + ") sha256 `" +
                  [&] { const auto b = bytes::read_file(f); return bytes::sha256_hex(b.data(), b.size()); }() + "`\n";
          } else if (f.filename() == "summary.json") {
            const auto j = json::parse(read_text(f));
            std::vector<double> v = j.at("test_auc").get<std::vector<double>>();
            study.push_back({std::to_string(j.at("real").get<int>()), std::to_string(j.at("synthetic").get<int>()), summarize(v)});
          }
        }
      }
      if (!study.empty()) md += "\n## Augmentation study (mean ± std test AUC)\n\n" + study_table(study);
      write_text(out, md);
      write_text(fs::path(out).string() + ".sha256", bytes::sha256_hex(md) + "\n");
      std::cout << "report sha256 " << bytes::sha256_hex(md) << "\n";
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
