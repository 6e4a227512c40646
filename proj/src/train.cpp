#include "twintower/train.hpp"

#include "twintower/rng.hpp"

#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace twintower {

namespace {

// Seed salts keep the independent random streams (init, batch order, heads)
// from colliding.
constexpr std::uint64_t kSaltInit = 1;
constexpr std::uint64_t kSaltData = 2;
constexpr std::uint64_t kSaltHeadsInit = 3;
constexpr std::uint64_t kSaltHeadsData = 4;
constexpr std::uint64_t kSaltEval = 5;

class IntervalMean {
public:
    explicit IntervalMean(std::uint64_t every, std::vector<double>& sink)
        : every_(every), sink_(sink) {}
    void push(double v) {
        acc_ += v;
        if (++n_ == every_) flush();
    }
    void finish() {
        if (n_ > 0) flush();
    }

private:
    void flush() {
        sink_.push_back(acc_ / static_cast<double>(n_));
        acc_ = 0.0;
        n_ = 0;
    }
    std::uint64_t every_, n_ = 0;
    double acc_ = 0.0;
    std::vector<double>& sink_;
};

} // namespace

Checkpoint train_joint(const ModelConfig& config, const TokenStream& stream,
                       std::uint64_t seed, const TrainOptions& opts) {
    if (opts.steps == 0) throw std::invalid_argument("steps must be at least 1");
    Checkpoint ck;
    ck.model = make_two_tower(config, mix_seed(seed, kSaltInit));
    ck.seed = seed;
    ck.phase1_steps = opts.steps;

    AdamState adam = make_adam(ck.model.params, opts.adam);
    IntervalMean history(opts.log_every, ck.loss_history);
    const std::uint64_t data_seed = mix_seed(seed, kSaltData);

    std::uint64_t step = 0;
    for (std::uint64_t epoch = 0; step < opts.steps; ++epoch) {
        const auto batches = make_batches(stream, task_for(config.model_type),
                                          config.seq_len, opts.batch_size,
                                          config.mask_rate, mix_seed(data_seed, epoch));
        for (const auto& batch : batches) {
            if (step >= opts.steps) break;
            ck.model.params.zero_grads();
            const double loss = two_tower_grad(ck.model, batch);
            if (!std::isfinite(loss)) {
                throw std::runtime_error("non-finite loss at step " +
                                         std::to_string(step + 1));
            }
            adam_step(adam, ck.model.params);
            ++step;
            history.push(loss);
        }
    }
    history.finish();
    return ck;
}

void train_heads(Checkpoint& ckpt, const TokenStream& stream, std::uint64_t seed,
                 const TrainOptions& opts) {
    const ModelConfig& config = ckpt.model.config;
    ckpt.heads = make_tower_heads(config, mix_seed(seed, kSaltHeadsInit));
    ckpt.has_heads = true;
    ckpt.phase2_steps = opts.steps;
    ckpt.tower_order = 0;
    ckpt.order_tie = false;
    ckpt.head1_history.clear();
    ckpt.head2_history.clear();
    if (opts.steps == 0) return;

    AdamState adam = make_adam(ckpt.heads.params, opts.adam);
    IntervalMean hist1(opts.log_every, ckpt.head1_history);
    IntervalMean hist2(opts.log_every, ckpt.head2_history);
    const Tensor& E = ckpt.model.params.value(ckpt.model.E);
    const std::uint64_t data_seed = mix_seed(seed, kSaltHeadsData);

    std::uint64_t step = 0;
    for (std::uint64_t epoch = 0; step < opts.steps; ++epoch) {
        const auto batches = make_batches(stream, task_for(config.model_type),
                                          config.seq_len, opts.batch_size,
                                          config.mask_rate, mix_seed(data_seed, epoch));
        for (const auto& batch : batches) {
            if (step >= opts.steps) break;
            const Tensor h1 = encode_tower(ckpt.model, 1, batch);
            const Tensor h2 = encode_tower(ckpt.model, 2, batch);
            ckpt.heads.params.zero_grads();
            const HeadLosses losses = tower_heads_grad(ckpt.heads, h1, h2, E, batch);
            if (!std::isfinite(losses.loss1) || !std::isfinite(losses.loss2)) {
                throw std::runtime_error("non-finite loss at step " +
                                         std::to_string(step + 1));
            }
            adam_step(adam, ckpt.heads.params);
            ++step;
            hist1.push(losses.loss1);
            hist2.push(losses.loss2);
        }
    }
    hist1.finish();
    hist2.finish();
}

std::vector<Batch> make_eval_batches(const Checkpoint& ckpt,
                                     const TokenStream& stream,
                                     std::size_t batch_size) {
    const ModelConfig& config = ckpt.model.config;
    return make_batches(stream, task_for(config.model_type), config.seq_len,
                        batch_size, config.mask_rate,
                        mix_seed(ckpt.seed, kSaltEval));
}

void order_towers(Checkpoint& ckpt, const TokenStream& eval_stream,
                  std::size_t batch_size) {
    if (!ckpt.has_heads) throw std::invalid_argument("heads not trained");
    if (eval_stream.ids.empty()) throw std::invalid_argument("empty eval stream");
    const auto batches = make_eval_batches(ckpt, eval_stream, batch_size);
    double sum1 = 0.0, sum2 = 0.0;
    std::size_t n = 0;
    std::vector<PositionScore> scores;
    for (const auto& batch : batches) {
        scores.clear();
        append_position_scores(ckpt.model, ckpt.heads, batch, scores);
        for (const auto& s : scores) {
            sum1 += s.p1;
            sum2 += s.p2;
        }
        n += scores.size();
    }
    if (n == 0) throw std::invalid_argument("empty eval stream");
    const double mean1 = sum1 / static_cast<double>(n);
    const double mean2 = sum2 / static_cast<double>(n);
    ckpt.order_tie = mean1 == mean2;
    ckpt.tower_order = mean2 > mean1 ? 2 : 1;
}

namespace {

std::string fmt_double(double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

std::string fmt_double_list(const std::vector<double>& v) {
    std::string out;
    for (std::size_t i = 0; i < v.size(); ++i) {
        if (i) out += ',';
        out += fmt_double(v[i]);
    }
    return out;
}

std::vector<double> parse_double_list(const std::string& s) {
    std::vector<double> out;
    std::size_t pos = 0;
    while (pos < s.size()) {
        auto comma = s.find(',', pos);
        if (comma == std::string::npos) comma = s.size();
        out.push_back(std::stod(s.substr(pos, comma - pos)));
        pos = comma + 1;
    }
    return out;
}

std::string serialize_config(const Checkpoint& ck) {
    const ModelConfig& c = ck.model.config;
    std::ostringstream os;
    os << "model_type=" << model_type_name(c.model_type) << '\n'
       << "layers=" << c.layers << '\n'
       << "hidden_size=" << c.hidden_size << '\n'
       << "embed_size=" << c.embed_size << '\n'
       << "heads=" << c.heads << '\n'
       << "intermediate_size=" << c.intermediate_size << '\n'
       << "vocab_size=" << c.vocab_size << '\n'
       << "seq_len=" << c.seq_len << '\n'
       << "mask_rate=" << fmt_double(c.mask_rate) << '\n'
       << "seed=" << ck.seed << '\n'
       << "phase1_steps=" << ck.phase1_steps << '\n'
       << "phase2_steps=" << ck.phase2_steps << '\n'
       << "has_heads=" << (ck.has_heads ? 1 : 0) << '\n'
       << "tower_order=" << ck.tower_order << '\n'
       << "order_tie=" << (ck.order_tie ? 1 : 0) << '\n'
       << "eval_fraction=" << fmt_double(ck.eval_fraction) << '\n'
       << "split_seed=" << ck.split_seed << '\n'
       << "loss_history=" << fmt_double_list(ck.loss_history) << '\n'
       << "head1_history=" << fmt_double_list(ck.head1_history) << '\n'
       << "head2_history=" << fmt_double_list(ck.head2_history) << '\n';
    return os.str();
}

void write_u64(std::ostream& out, std::uint64_t v) {
    unsigned char b[8];
    for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
    out.write(reinterpret_cast<const char*>(b), 8);
}

std::uint64_t read_u64(std::istream& in) {
    unsigned char b[8];
    in.read(reinterpret_cast<char*>(b), 8);
    if (!in) throw std::runtime_error("truncated checkpoint");
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(b[i]) << (8 * i);
    return v;
}

void write_tensor(std::ostream& out, const std::string& name, const Tensor& t) {
    write_u64(out, name.size());
    out.write(name.data(), static_cast<std::streamsize>(name.size()));
    write_u64(out, t.rank());
    for (std::size_t i = 0; i < t.rank(); ++i) write_u64(out, t.dim(i));
    // Raw IEEE doubles; this code targets little-endian hosts.
    out.write(reinterpret_cast<const char*>(t.data()),
              static_cast<std::streamsize>(t.size() * sizeof(double)));
}

void read_into_tensor(std::istream& in, Tensor& t, const std::string& name,
                      const std::vector<std::uint64_t>& dims) {
    if (t.rank() != dims.size()) {
        throw std::runtime_error("checkpoint tensor " + name + " has wrong rank");
    }
    for (std::size_t i = 0; i < dims.size(); ++i) {
        if (t.dim(i) != dims[i]) {
            throw std::runtime_error("checkpoint tensor " + name + " has wrong shape");
        }
    }
    in.read(reinterpret_cast<char*>(t.data()),
            static_cast<std::streamsize>(t.size() * sizeof(double)));
    if (!in) throw std::runtime_error("truncated checkpoint");
}

} // namespace

void save_checkpoint(const Checkpoint& ckpt, const std::string& path) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot open " + path);
    out.write("TTLM", 4);
    const char version = 0x01;
    out.write(&version, 1);

    const std::string cfg = serialize_config(ckpt);
    write_u64(out, cfg.size());
    out.write(cfg.data(), static_cast<std::streamsize>(cfg.size()));

    const std::uint64_t count = ckpt.model.params.size() +
                                (ckpt.has_heads ? ckpt.heads.params.size() : 0);
    write_u64(out, count);
    for (std::size_t i = 0; i < ckpt.model.params.size(); ++i) {
        write_tensor(out, ckpt.model.params.name(i), ckpt.model.params.value(i));
    }
    if (ckpt.has_heads) {
        for (std::size_t i = 0; i < ckpt.heads.params.size(); ++i) {
            write_tensor(out, ckpt.heads.params.name(i), ckpt.heads.params.value(i));
        }
    }
    if (!out) throw std::runtime_error("write failed: " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open " + path);
    char magic[4];
    in.read(magic, 4);
    if (in.gcount() < 4) throw std::runtime_error("truncated checkpoint");
    if (std::memcmp(magic, "TTLM", 4) != 0) {
        throw std::runtime_error("not a twintower checkpoint (expected magic \"TTLM\"): " + path);
    }
    char version = 0;
    in.read(&version, 1);
    if (!in) throw std::runtime_error("truncated checkpoint");
    if (version != 0x01) {
        throw std::runtime_error("unsupported checkpoint version " +
                                 std::to_string(static_cast<int>(version)) +
                                 " (expected 1): " + path);
    }

    const std::uint64_t cfg_len = read_u64(in);
    std::string cfg(cfg_len, '\0');
    in.read(cfg.data(), static_cast<std::streamsize>(cfg_len));
    if (!in) throw std::runtime_error("truncated checkpoint");

    ModelConfig config;
    Checkpoint ck;
    std::istringstream lines(cfg);
    std::string line;
    while (std::getline(lines, line)) {
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos) {
            throw std::runtime_error("malformed checkpoint config line: " + line);
        }
        const std::string key = line.substr(0, eq);
        const std::string val = line.substr(eq + 1);
        if (key == "model_type") config.model_type = model_type_from_string(val);
        else if (key == "layers") config.layers = std::stoull(val);
        else if (key == "hidden_size") config.hidden_size = std::stoull(val);
        else if (key == "embed_size") config.embed_size = std::stoull(val);
        else if (key == "heads") config.heads = std::stoull(val);
        else if (key == "intermediate_size") config.intermediate_size = std::stoull(val);
        else if (key == "vocab_size") config.vocab_size = std::stoull(val);
        else if (key == "seq_len") config.seq_len = std::stoull(val);
        else if (key == "mask_rate") config.mask_rate = std::stod(val);
        else if (key == "seed") ck.seed = std::stoull(val);
        else if (key == "phase1_steps") ck.phase1_steps = std::stoull(val);
        else if (key == "phase2_steps") ck.phase2_steps = std::stoull(val);
        else if (key == "has_heads") ck.has_heads = val == "1";
        else if (key == "tower_order") ck.tower_order = std::stoi(val);
        else if (key == "order_tie") ck.order_tie = val == "1";
        else if (key == "eval_fraction") ck.eval_fraction = std::stod(val);
        else if (key == "split_seed") ck.split_seed = std::stoull(val);
        else if (key == "loss_history") ck.loss_history = parse_double_list(val);
        else if (key == "head1_history") ck.head1_history = parse_double_list(val);
        else if (key == "head2_history") ck.head2_history = parse_double_list(val);
        else throw std::runtime_error("unknown checkpoint field: " + key);
    }

    ck.model = make_two_tower(config, 0);
    if (ck.has_heads) ck.heads = make_tower_heads(config, 0);

    const std::uint64_t count = read_u64(in);
    const std::uint64_t expected = ck.model.params.size() +
                                   (ck.has_heads ? ck.heads.params.size() : 0);
    if (count != expected) {
        throw std::runtime_error("checkpoint tensor count " + std::to_string(count) +
                                 " does not match config (expected " +
                                 std::to_string(expected) + ")");
    }
    for (std::uint64_t k = 0; k < count; ++k) {
        const std::uint64_t name_len = read_u64(in);
        std::string name(name_len, '\0');
        in.read(name.data(), static_cast<std::streamsize>(name_len));
        if (!in) throw std::runtime_error("truncated checkpoint");
        const std::uint64_t rank = read_u64(in);
        std::vector<std::uint64_t> dims(rank);
        for (auto& d : dims) d = read_u64(in);
        if (ck.model.params.contains(name)) {
            read_into_tensor(in, ck.model.params.value(ck.model.params.index_of(name)),
                             name, dims);
        } else if (ck.has_heads && ck.heads.params.contains(name)) {
            read_into_tensor(in, ck.heads.params.value(ck.heads.params.index_of(name)),
                             name, dims);
        } else {
            throw std::runtime_error("checkpoint tensor " + name +
                                     " does not match config");
        }
    }
    return ck;
}

} // namespace twintower
