#include "dnr/env/transitions.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <map>
#include <sstream>

#include "dnr/error.hpp"

static_assert(std::endian::native == std::endian::little, "batch I/O assumes little endian");

namespace dnr::env {

namespace {

constexpr char kMagic[8] = {'D', 'N', 'R', 'B', 'A', 'T', 'C', 'H'};

enum class ColType : std::uint8_t { F64 = 0, I32 = 1, U8 = 2 };

struct Column {
    ColType type;
    std::vector<double> f64;
    std::vector<std::int32_t> i32;
    std::vector<std::uint8_t> u8;
};

template <class T>
void put_raw(std::ostream& out, const T& v) {
    out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <class T>
void put_column(std::ostream& out, const std::string& name, ColType type, const std::vector<T>& data) {
    put_raw(out, static_cast<std::uint32_t>(name.size()));
    out.write(name.data(), static_cast<std::streamsize>(name.size()));
    put_raw(out, static_cast<std::uint8_t>(type));
    put_raw(out, static_cast<std::uint64_t>(data.size()));
    out.write(reinterpret_cast<const char*>(data.data()), static_cast<std::streamsize>(data.size() * sizeof(T)));
}

template <class T>
T get_raw(std::istream& in) {
    T v;
    if (!in.read(reinterpret_cast<char*>(&v), sizeof(T))) throw ParseError("transition file truncated");
    return v;
}

template <class T>
std::vector<T> get_payload(std::istream& in, std::uint64_t count) {
    std::vector<T> v(count);
    if (!in.read(reinterpret_cast<char*>(v.data()), static_cast<std::streamsize>(count * sizeof(T))))
        throw ParseError("transition file truncated inside a column");
    return v;
}

}  // namespace

void write_batch(const std::filesystem::path& path, const TransitionBatch& batch) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw ValidationError("cannot write transition file " + path.string());
    const std::size_t m = batch.rows.empty() ? 0 : batch.rows.front().config.size();

    nlohmann::json header = batch.header;
    header["schema_version"] = TransitionBatch::kSchemaVersion;
    header["feeder"] = batch.feeder;
    header["reward"] = batch.reward.to_json();
    header["norms"] = batch.norms.to_json();
    header["rows"] = batch.rows.size();
    header["train_rows"] = batch.train_rows;
    header["branches"] = m;
    header["series_hours"] = batch.series.hours();
    header["series_buses"] = batch.series.buses();
    const std::string text = header.dump();

    out.write(kMagic, sizeof(kMagic));
    put_raw(out, static_cast<std::uint64_t>(text.size()));
    out.write(text.data(), static_cast<std::streamsize>(text.size()));

    const std::size_t n = batch.rows.size();
    std::vector<std::int32_t> t(n), close(n), open(n), scenario(n), ctl_close(n), ctl_open(n);
    std::vector<double> reward(n), loss(n), sw(n), pen(n);
    std::vector<std::uint8_t> alpha, alpha_next;
    alpha.reserve(n * m);
    alpha_next.reserve(n * m);
    for (std::size_t k = 0; k < n; ++k) {
        const auto& r = batch.rows[k];
        require(r.config.size() == m && r.next_config.size() == m, "write_batch: ragged configurations");
        t[k] = r.t;
        close[k] = r.action.close;
        open[k] = r.action.open;
        scenario[k] = static_cast<std::int32_t>(r.scenario);
        ctl_close[k] = r.controller_action.close;
        ctl_open[k] = r.controller_action.open;
        reward[k] = r.reward;
        loss[k] = r.loss_cost;
        sw[k] = r.switch_cost;
        pen[k] = r.penalty;
        alpha.insert(alpha.end(), r.config.bits().begin(), r.config.bits().end());
        alpha_next.insert(alpha_next.end(), r.next_config.bits().begin(), r.next_config.bits().end());
    }
    put_raw(out, static_cast<std::uint32_t>(14));
    put_column(out, "t", ColType::I32, t);
    put_column(out, "close", ColType::I32, close);
    put_column(out, "open", ColType::I32, open);
    put_column(out, "reward", ColType::F64, reward);
    put_column(out, "loss_cost", ColType::F64, loss);
    put_column(out, "switch_cost", ColType::F64, sw);
    put_column(out, "penalty", ColType::F64, pen);
    put_column(out, "scenario", ColType::I32, scenario);
    put_column(out, "ctl_close", ColType::I32, ctl_close);
    put_column(out, "ctl_open", ColType::I32, ctl_open);
    put_column(out, "alpha", ColType::U8, alpha);
    put_column(out, "alpha_next", ColType::U8, alpha_next);
    put_column(out, "series_p", ColType::F64, batch.series.p_data());
    put_column(out, "series_q", ColType::F64, batch.series.q_data());
    if (!out) throw ValidationError("write failed for " + path.string());
}

TransitionBatch read_batch(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ParseError("cannot open transition file " + path.string());
    char magic[sizeof(kMagic)];
    if (!in.read(magic, sizeof(magic)) || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0)
        throw ParseError(path.string() + ": not a transition file");
    const auto header_len = get_raw<std::uint64_t>(in);
    std::string text(header_len, '\0');
    if (!in.read(text.data(), static_cast<std::streamsize>(header_len))) throw ParseError("transition header truncated");

    TransitionBatch batch;
    try {
        batch.header = nlohmann::json::parse(text);
    } catch (const nlohmann::json::exception& e) {
        throw ParseError(std::string("transition header: ") + e.what());
    }
    const auto& h = batch.header;
    if (h.value("schema_version", 0) != TransitionBatch::kSchemaVersion)
        throw ParseError("unsupported transition schema version");
    batch.feeder = h.at("feeder").get<std::string>();
    batch.reward = RewardParams::from_json(h.at("reward"));
    batch.norms = FeatureNorms::from_json(h.at("norms"));
    batch.train_rows = h.at("train_rows").get<std::size_t>();
    const auto n = h.at("rows").get<std::size_t>();
    const auto m = h.at("branches").get<std::size_t>();
    const auto hours = h.at("series_hours").get<std::size_t>();
    const auto buses = h.at("series_buses").get<std::size_t>();

    std::map<std::string, Column> cols;
    const auto count = get_raw<std::uint32_t>(in);
    for (std::uint32_t c = 0; c < count; ++c) {
        const auto len = get_raw<std::uint32_t>(in);
        std::string name(len, '\0');
        if (!in.read(name.data(), len)) throw ParseError("transition column name truncated");
        Column col;
        col.type = static_cast<ColType>(get_raw<std::uint8_t>(in));
        const auto items = get_raw<std::uint64_t>(in);
        switch (col.type) {
            case ColType::F64: col.f64 = get_payload<double>(in, items); break;
            case ColType::I32: col.i32 = get_payload<std::int32_t>(in, items); break;
            case ColType::U8: col.u8 = get_payload<std::uint8_t>(in, items); break;
            default: throw ParseError("column \"" + name + "\" has unknown type");
        }
        cols.emplace(std::move(name), std::move(col));
    }
    auto col = [&](const char* name, std::size_t expect) -> const Column& {
        auto it = cols.find(name);
        if (it == cols.end()) throw ParseError(std::string("transition file lacks column ") + name);
        const auto& c = it->second;
        const std::size_t have = c.f64.size() + c.i32.size() + c.u8.size();
        if (have != expect) throw ParseError(std::string("column ") + name + " has the wrong length");
        return c;
    };

    const auto& t = col("t", n).i32;
    const auto& close = col("close", n).i32;
    const auto& open = col("open", n).i32;
    const auto& reward = col("reward", n).f64;
    const auto& loss = col("loss_cost", n).f64;
    const auto& sw = col("switch_cost", n).f64;
    const auto& pen = col("penalty", n).f64;
    const auto& scenario = col("scenario", n).i32;
    const auto& ctl_close = col("ctl_close", n).i32;
    const auto& ctl_open = col("ctl_open", n).i32;
    const auto& alpha = col("alpha", n * m).u8;
    const auto& alpha_next = col("alpha_next", n * m).u8;

    batch.series = InjectionSeries(hours, buses);
    batch.series.p_data() = col("series_p", hours * buses).f64;
    batch.series.q_data() = col("series_q", hours * buses).f64;

    batch.rows.resize(n);
    for (std::size_t k = 0; k < n; ++k) {
        auto& r = batch.rows[k];
        r.t = t[k];
        r.action = {close[k], open[k]};
        r.reward = reward[k];
        r.loss_cost = loss[k];
        r.switch_cost = sw[k];
        r.penalty = pen[k];
        r.scenario = static_cast<Scenario>(scenario[k]);
        r.controller_action = {ctl_close[k], ctl_open[k]};
        r.config = Configuration(m);
        r.next_config = Configuration(m);
        for (std::size_t b = 0; b < m; ++b) {
            r.config.set(static_cast<int>(b), alpha[k * m + b] != 0);
            r.next_config.set(static_cast<int>(b), alpha_next[k * m + b] != 0);
        }
    }
    return batch;
}

}  // namespace dnr::env
