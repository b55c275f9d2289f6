#include "dualmim/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

#include "dualmim/config.hpp"
#include "dualmim/error.hpp"

namespace dualmim {

namespace {

constexpr const char* kMagic = "DUALMIM-CHECKPOINT";

void write_doubles(std::ostream& out, const std::vector<double>& data) {
    std::vector<unsigned char> buf(data.size() * 8);
    for (std::size_t i = 0; i < data.size(); ++i) {
        const auto bits = std::bit_cast<std::uint64_t>(data[i]);
        for (int b = 0; b < 8; ++b) buf[i * 8 + b] = static_cast<unsigned char>(bits >> (8 * b));
    }
    out.write(reinterpret_cast<const char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
}

void read_doubles(std::istream& in, std::vector<double>& data, const std::string& what) {
    std::vector<unsigned char> buf(data.size() * 8);
    in.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
    if (in.gcount() != static_cast<std::streamsize>(buf.size())) {
        throw Error(ErrorCode::checkpoint_format, "truncated tensor data for " + what);
    }
    for (std::size_t i = 0; i < data.size(); ++i) {
        std::uint64_t bits = 0;
        for (int b = 0; b < 8; ++b) bits |= static_cast<std::uint64_t>(buf[i * 8 + b]) << (8 * b);
        data[i] = std::bit_cast<double>(bits);
    }
}

std::string next_line(std::istream& in, const char* what) {
    std::string line;
    if (!std::getline(in, line)) throw Error(ErrorCode::checkpoint_format, std::string("checkpoint ends before ") + what);
    return line;
}

std::string expect_field(std::istream& in, const std::string& key) {
    const std::string line = next_line(in, key.c_str());
    if (line.rfind(key + " ", 0) != 0) {
        throw Error(ErrorCode::checkpoint_format, "expected '" + key + "' in checkpoint, got '" + line + "'");
    }
    return line.substr(key.size() + 1);
}

std::uint64_t to_u64(const std::string& s, const char* what) {
    try {
        std::size_t pos = 0;
        const auto v = std::stoull(s, &pos);
        if (pos != s.size()) throw std::invalid_argument(s);
        return v;
    } catch (const std::exception&) {
        throw Error(ErrorCode::checkpoint_format, std::string("bad ") + what + " in checkpoint: " + s);
    }
}

}  // namespace

void save_checkpoint(const TrainingState& st, const std::filesystem::path& file) {
    if (file.has_parent_path()) {
        std::error_code ec;
        std::filesystem::create_directories(file.parent_path(), ec);
    }
    const std::filesystem::path tmp = file.string() + ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary);
        if (!out) throw Error(ErrorCode::unwritable_path, "cannot write checkpoint: " + file.string());
        out << kMagic << ' ' << kCheckpointVersion << '\n';
        const ConfigMap cfg = to_config_map(st.config);
        out << "config " << cfg.size() << '\n' << format_config(cfg);
        out << "step " << st.step << '\n';
        out << "rng " << st.rng.serialize() << '\n';
        out << "adam_t " << st.adam.t << '\n';
        out << "state_version " << st.model.version << '\n';
        out << "tensors " << st.model.params.size() << '\n';
        for (std::size_t i = 0; i < st.model.params.size(); ++i) {
            const Parameter& p = st.model.params[i];
            out << p.name << ' ' << p.layer << ' ' << int(p.frozen) << ' ' << int(p.encoder) << ' '
                << p.value.shape.size();
            for (auto d : p.value.shape) out << ' ' << d;
            out << '\n';
            write_doubles(out, p.value.data);
            write_doubles(out, st.adam.m[i].data);
            write_doubles(out, st.adam.v[i].data);
        }
        out << "end\n";
        if (!out) throw Error(ErrorCode::unwritable_path, "failed writing checkpoint: " + file.string());
    }
    std::filesystem::rename(tmp, file);
}

TrainingState load_checkpoint(const std::filesystem::path& file) {
    std::ifstream in(file, std::ios::binary);
    if (!in) throw Error(ErrorCode::missing_file, "cannot read checkpoint: " + file.string());
    {
        std::istringstream head(next_line(in, "header"));
        std::string magic;
        int version = 0;
        head >> magic >> version;
        if (magic != kMagic) throw Error(ErrorCode::checkpoint_format, "not a checkpoint: " + file.string());
        if (version != kCheckpointVersion) {
            throw Error(ErrorCode::checkpoint_format, "unsupported checkpoint version " + std::to_string(version));
        }
    }
    TrainingState st;
    const auto n_cfg = to_u64(expect_field(in, "config"), "config size");
    std::string cfg_text;
    for (std::uint64_t i = 0; i < n_cfg; ++i) cfg_text += next_line(in, "config") + "\n";
    apply_config(st.config, parse_config(cfg_text, file.string()));
    st.step = to_u64(expect_field(in, "step"), "step");
    st.rng.deserialize(expect_field(in, "rng"));
    st.adam.t = to_u64(expect_field(in, "adam_t"), "adam step");
    st.model.version = to_u64(expect_field(in, "state_version"), "state version");
    st.model.config = st.config.model;
    const auto n = to_u64(expect_field(in, "tensors"), "tensor count");
    for (std::uint64_t i = 0; i < n; ++i) {
        std::istringstream rec(next_line(in, "tensor record"));
        Parameter p;
        int frozen = 0, encoder = 0;
        std::size_t ndim = 0;
        rec >> p.name >> p.layer >> frozen >> encoder >> ndim;
        std::vector<std::size_t> shape(ndim);
        for (auto& d : shape) rec >> d;
        if (!rec || p.name.empty()) throw Error(ErrorCode::checkpoint_format, "bad tensor record in " + file.string());
        p.frozen = frozen != 0;
        p.encoder = encoder != 0;
        p.value = Tensor(shape);
        Tensor m(shape), v(shape);
        read_doubles(in, p.value.data, p.name);
        read_doubles(in, m.data, p.name);
        read_doubles(in, v.data, p.name);
        st.model.params.push_back(std::move(p));
        st.adam.m.push_back(std::move(m));
        st.adam.v.push_back(std::move(v));
    }
    if (next_line(in, "end marker") != "end") throw Error(ErrorCode::checkpoint_format, "missing end marker");
    return st;
}

}  // namespace dualmim
