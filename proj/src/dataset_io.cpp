#include "trove/dataset_io.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

namespace trove {

static_assert(std::endian::native == std::endian::little, "tensor files assume a little-endian host");

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr char kTensorMagic[8] = {'T', 'R', 'V', 'D', 'S', 'E', 'T', '1'};
constexpr std::uint32_t kTensorVersion = 1;

template <class T>
void put(std::ostream& os, T v) {
    os.write(reinterpret_cast<const char*>(&v), sizeof v);
}

template <class T>
T get(std::istream& is) {
    T v{};
    is.read(reinterpret_cast<char*>(&v), sizeof v);
    if (!is) throw Error("truncated tensor file");
    return v;
}

json geometry_json(const FrameGeometry& g) {
    return {{"frame_size", g.frame_size}, {"circle_diameter", g.circle_diameter}, {"step_size", g.step_size}};
}

}  // namespace

json to_json(const DatasetConfig& c) {
    return {
        {"feature",
         {{"kind", feature_kind_name(c.feature.kind)},
          {"color", {c.feature.color.r, c.feature.color.g, c.feature.color.b}},
          {"object_size", c.feature.object_size}}},
        {"geometry", geometry_json(c.geometry)},
        {"seq_len", c.seq_len},
        {"target_cramers_v", c.target_cramers_v},
        {"feature_span", c.feature_span},
        {"train_count", c.train_count},
        {"val_count", c.val_count},
        {"test_count", c.test_count},
        {"q_south", c.q_south},
        {"seed", c.seed},
    };
}

DatasetConfig dataset_config_from_json(const json& j) {
    DatasetConfig c;
    if (j.contains("feature")) {
        const auto& f = j.at("feature");
        if (f.contains("kind")) {
            auto k = parse_feature_kind(f.at("kind").get<std::string>());
            if (!k) throw Error("unknown feature kind: " + f.at("kind").get<std::string>());
            c.feature.kind = *k;
        }
        if (f.contains("color")) {
            const auto& col = f.at("color");
            c.feature.color = {col.at(0).get<float>(), col.at(1).get<float>(), col.at(2).get<float>()};
        }
        c.feature.object_size = f.value("object_size", c.feature.object_size);
    }
    if (j.contains("geometry")) {
        const auto& g = j.at("geometry");
        c.geometry.frame_size = g.value("frame_size", c.geometry.frame_size);
        c.geometry.circle_diameter = g.value("circle_diameter", c.geometry.circle_diameter);
        c.geometry.step_size = g.value("step_size", c.geometry.step_size);
    }
    c.seq_len = j.value("seq_len", c.seq_len);
    c.target_cramers_v = j.value("target_cramers_v", c.target_cramers_v);
    c.feature_span = j.value("feature_span", c.feature_span);
    c.train_count = j.value("train_count", c.train_count);
    c.val_count = j.value("val_count", c.val_count);
    c.test_count = j.value("test_count", c.test_count);
    c.q_south = j.value("q_south", c.q_south);
    c.seed = j.value("seed", c.seed);
    return c;
}

std::string config_hash(const DatasetConfig& cfg) { return hex64(fnv1a(to_json(cfg).dump())); }

std::string flag_bitstring(const SequenceSample& s) {
    std::string bits(s.feature_flags.size(), '0');
    for (std::size_t t = 0; t < bits.size(); ++t)
        if (s.feature_flags[t]) bits[t] = '1';
    return bits;
}

void write_split_tensor(const Dataset& ds, const Split& split, const fs::path& file) {
    std::ofstream os(file, std::ios::binary);
    if (!os) throw Error("cannot write " + file.string());
    const auto& g = ds.config.geometry;
    os.write(kTensorMagic, sizeof kTensorMagic);
    put<std::uint32_t>(os, kTensorVersion);
    put<std::uint32_t>(os, static_cast<std::uint32_t>(split.size()));
    put<std::uint32_t>(os, static_cast<std::uint32_t>(ds.config.seq_len));
    put<std::uint32_t>(os, static_cast<std::uint32_t>(g.frame_size));
    put<std::uint32_t>(os, static_cast<std::uint32_t>(g.frame_size));
    put<std::uint32_t>(os, ImageGrid::kChannels);
    for_each_frame(ds, split, [&](std::size_t, int, const ImageGrid& img) {
        const auto px = img.data();
        os.write(reinterpret_cast<const char*>(px.data()),
                 static_cast<std::streamsize>(px.size() * sizeof(float)));
    });
    if (!os) throw Error("failed writing " + file.string());
}

void save_dataset(const Dataset& ds, const fs::path& dir, bool write_tensors) {
    fs::create_directories(dir);
    json meta = {
        {"format", "trove-dataset"},
        {"version", 1},
        {"config", to_json(ds.config)},
        {"config_hash", config_hash(ds.config)},
        {"r_other", ds.r_other},
        {"realized_cramers_v", ds.realized_cramers_v},
        {"tensors", write_tensors},
        {"splits", json::object()},
    };
    for (const Split* split : {&ds.train, &ds.val, &ds.test}) {
        meta["splits"][split->name] = {{"count", split->size()}};
        std::ofstream csv(dir / (split->name + ".csv"));
        csv << "sequence_id,label,flags\n";
        for (const auto& s : split->sequences)
            csv << s.id << ',' << label_name(s.label) << ',' << flag_bitstring(s) << '\n';
        if (!csv) throw Error("failed writing labels for split " + split->name);
        if (write_tensors) write_split_tensor(ds, *split, dir / (split->name + ".bin"));
    }
    std::ofstream(dir / "metadata.json") << meta.dump(2) << '\n';
}

namespace {

std::vector<SequenceSample> read_labels(const fs::path& file, int seq_len) {
    std::ifstream is(file);
    if (!is) throw Error("missing labels file " + file.string());
    std::string line;
    std::getline(is, line);
    std::vector<SequenceSample> out;
    while (std::getline(is, line)) {
        if (line.empty()) continue;
        std::istringstream ls(line);
        std::string id, label, flags;
        std::getline(ls, id, ',');
        std::getline(ls, label, ',');
        std::getline(ls, flags, ',');
        SequenceSample s;
        s.id = static_cast<std::uint32_t>(std::stoul(id));
        auto l = parse_label(label);
        if (!l) throw Error("bad label '" + label + "' in " + file.string());
        s.label = *l;
        s.caption = caption_for(s.label);
        if (static_cast<int>(flags.size()) != seq_len) throw Error("flag length mismatch in " + file.string());
        for (char ch : flags) s.feature_flags.push_back(ch == '1' ? 1 : 0);
        out.push_back(std::move(s));
    }
    return out;
}

}  // namespace

Dataset load_dataset(const fs::path& dir) {
    std::ifstream mf(dir / "metadata.json");
    if (!mf) throw Error("not a dataset directory: " + dir.string());
    const json meta = json::parse(mf);
    Dataset ds;
    ds.config = dataset_config_from_json(meta.at("config"));
    ds.r_other = meta.value("r_other", 0.0);
    ds.realized_cramers_v = meta.value("realized_cramers_v", 0.0);

    bool all_tensors = true;
    for (Split* split : {&ds.train, &ds.val, &ds.test}) {
        split->name = split == &ds.train ? "train" : split == &ds.val ? "val" : "test";
        split->sequences = read_labels(dir / (split->name + ".csv"), ds.config.seq_len);
        const fs::path tensor = dir / (split->name + ".bin");
        if (fs::exists(tensor))
            split->tensor_path = tensor;
        else
            all_tensors = false;
    }
    if (all_tensors) return ds;

    Dataset regen = generate_dataset(ds.config);
    for (auto [stored, fresh] : {std::pair{&ds.train, &regen.train}, {&ds.val, &regen.val}, {&ds.test, &regen.test}}) {
        if (stored->size() != fresh->size()) throw Error("regenerated split size differs for " + stored->name);
        for (std::size_t i = 0; i < stored->size(); ++i) {
            auto& s = stored->sequences[i];
            const auto& f = fresh->sequences[i];
            if (s.label != f.label || s.feature_flags != f.feature_flags)
                throw Error("stored labels do not match regenerated split " + stored->name);
            s.frames = f.frames;
        }
        stored->tensor_path.clear();
    }
    return ds;
}

void for_each_frame(const Dataset& ds, const Split& split, const FrameVisitor& fn) {
    const auto& g = ds.config.geometry;
    if (split.tensor_path.empty()) {
        for (std::size_t i = 0; i < split.size(); ++i) {
            const auto& s = split.sequences[i];
            if (static_cast<int>(s.frames.size()) != s.length())
                throw Error("sequence has neither layouts nor a tensor source");
            for (int t = 0; t < s.length(); ++t)
                fn(i, t, render_layout(s.frames[t], ds.config.feature, g));
        }
        return;
    }
    std::ifstream is(split.tensor_path, std::ios::binary);
    if (!is) throw Error("cannot open " + split.tensor_path.string());
    char magic[8];
    is.read(magic, sizeof magic);
    if (!is || std::memcmp(magic, kTensorMagic, sizeof magic) != 0)
        throw Error("bad tensor magic in " + split.tensor_path.string());
    if (get<std::uint32_t>(is) != kTensorVersion) throw Error("unsupported tensor version");
    const auto count = get<std::uint32_t>(is);
    const auto n = get<std::uint32_t>(is);
    const auto h = get<std::uint32_t>(is);
    const auto w = get<std::uint32_t>(is);
    const auto c = get<std::uint32_t>(is);
    if (count != split.size() || static_cast<int>(n) != ds.config.seq_len || c != ImageGrid::kChannels)
        throw Error("tensor header does not match labels in " + split.tensor_path.string());
    ImageGrid img(static_cast<int>(h), static_cast<int>(w));
    for (std::size_t i = 0; i < count; ++i)
        for (int t = 0; t < static_cast<int>(n); ++t) {
            auto px = img.data();
            is.read(reinterpret_cast<char*>(px.data()), static_cast<std::streamsize>(px.size() * sizeof(float)));
            if (!is) throw Error("truncated tensor file " + split.tensor_path.string());
            fn(i, t, img);
        }
}

}  // namespace trove
