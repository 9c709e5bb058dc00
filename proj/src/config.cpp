#include "mqn/config.hpp"

#include <fstream>
#include <map>
#include <sstream>

namespace mqn {

int make_divisible(double value, int divisor)
{
    int v = std::max(divisor, static_cast<int>(value + divisor / 2.0) / divisor * divisor);
    if (v < 0.9 * value)
        v += divisor;
    return v;
}

void MqnConfig::validate() const
{
    if (!(width > 0.0f))
        throw Error("config: width must be positive");
    if (taps.size() != 4)
        throw Error("config: exactly four encoder taps are required");
    for (std::size_t i = 1; i < taps.size(); ++i)
        if (taps[i] <= taps[i - 1])
            throw Error("config: taps must be strictly increasing");
    if (taps.front() < 1 || taps.back() > 16)
        throw Error("config: taps must name encoder blocks 1..16");
    if (decoder_widths.size() != 4)
        throw Error("config: four decoder widths are required");
    for (int w : decoder_widths)
        if (w < 1)
            throw Error("config: decoder widths must be positive");
    if (decoder_blocks < 1 || expansion < 1 || first_expansion < 1)
        throw Error("config: decoder block count and expansions must be positive");
    if (ca_reduction < 1)
        throw Error("config: ca_reduction must be positive");
    if (reduce_channels < 1 || head_channels < 1)
        throw Error("config: channel counts must be positive");
    if (input_height <= 0 || input_width <= 0 || input_height % 32 != 0 || input_width % 32 != 0)
        throw Error("config: input size must be a positive multiple of 32");
}

namespace {

std::string join(const std::vector<int>& v)
{
    std::string s;
    for (std::size_t i = 0; i < v.size(); ++i)
        s += (i ? "," : "") + std::to_string(v[i]);
    return s;
}

std::vector<int> split_ints(const std::string& key, const std::string& s)
{
    std::vector<int> out;
    std::stringstream ss(s);
    std::string item;
    while (std::getline(ss, item, ','))
        try {
            out.push_back(std::stoi(item));
        } catch (const std::exception&) {
            throw Error("config: bad integer list for '" + key + "'");
        }
    return out;
}

std::string trim(const std::string& s)
{
    auto b = s.find_first_not_of(" \t\r");
    auto e = s.find_last_not_of(" \t\r");
    return b == std::string::npos ? "" : s.substr(b, e - b + 1);
}

bool parse_bool(const std::string& key, const std::string& v)
{
    if (v == "true" || v == "1")
        return true;
    if (v == "false" || v == "0")
        return false;
    throw Error("config: bad boolean for '" + key + "'");
}

} // namespace

std::string MqnConfig::to_text() const
{
    std::ostringstream os;
    os << "width=" << width << "\n"
       << "taps=" << join(taps) << "\n"
       << "decoder_widths=" << join(decoder_widths) << "\n"
       << "decoder_blocks=" << decoder_blocks << "\n"
       << "expansion=" << expansion << "\n"
       << "first_expansion=" << first_expansion << "\n"
       << "attention=" << attention_name(attention) << "\n"
       << "ca_reduction=" << ca_reduction << "\n"
       << "ca_mode=" << (ca_mode == CaMode::divide ? "divide" : "multiply") << "\n"
       << "reduce_channels=" << reduce_channels << "\n"
       << "head_channels=" << head_channels << "\n"
       << "head_relu=" << (head_relu ? "true" : "false") << "\n"
       << "relu6=" << (relu6 ? "true" : "false") << "\n"
       << "input_height=" << input_height << "\n"
       << "input_width=" << input_width << "\n";
    return os.str();
}

MqnConfig MqnConfig::parse(const std::string& text)
{
    MqnConfig cfg;
    std::istringstream in(text);
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        line = trim(line.substr(0, line.find('#')));
        if (line.empty())
            continue;
        auto eq = line.find('=');
        if (eq == std::string::npos)
            throw Error("config line " + std::to_string(lineno) + ": expected key=value");
        const std::string key = trim(line.substr(0, eq));
        const std::string val = trim(line.substr(eq + 1));
        try {
            if (key == "width")
                cfg.width = std::stof(val);
            else if (key == "taps")
                cfg.taps = split_ints(key, val);
            else if (key == "decoder_widths")
                cfg.decoder_widths = split_ints(key, val);
            else if (key == "decoder_blocks")
                cfg.decoder_blocks = std::stoi(val);
            else if (key == "expansion")
                cfg.expansion = std::stoi(val);
            else if (key == "first_expansion")
                cfg.first_expansion = std::stoi(val);
            else if (key == "attention")
                cfg.attention = parse_attention(val);
            else if (key == "ca_reduction")
                cfg.ca_reduction = std::stoi(val);
            else if (key == "ca_mode") {
                if (val != "divide" && val != "multiply")
                    throw Error("config: ca_mode must be divide or multiply");
                cfg.ca_mode = val == "divide" ? CaMode::divide : CaMode::multiply;
            } else if (key == "reduce_channels")
                cfg.reduce_channels = std::stoi(val);
            else if (key == "head_channels")
                cfg.head_channels = std::stoi(val);
            else if (key == "head_relu")
                cfg.head_relu = parse_bool(key, val);
            else if (key == "relu6")
                cfg.relu6 = parse_bool(key, val);
            else if (key == "input_height")
                cfg.input_height = std::stoi(val);
            else if (key == "input_width")
                cfg.input_width = std::stoi(val);
            else
                throw Error("config line " + std::to_string(lineno) + ": unknown key '" + key + "'");
        } catch (const std::invalid_argument&) {
            throw Error("config line " + std::to_string(lineno) + ": bad value for '" + key + "'");
        } catch (const std::out_of_range&) {
            throw Error("config line " + std::to_string(lineno) + ": value out of range for '" + key + "'");
        }
    }
    cfg.validate();
    return cfg;
}

MqnConfig MqnConfig::load(const std::string& path_or_default)
{
    if (path_or_default.empty() || path_or_default == "default")
        return MqnConfig{};
    std::ifstream f(path_or_default);
    if (!f)
        throw Error("cannot open config file " + path_or_default);
    std::stringstream ss;
    ss << f.rdbuf();
    return parse(ss.str());
}

} // namespace mqn
