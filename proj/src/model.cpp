#include "pgx/model.hpp"

#include "pgx/errors.hpp"

namespace pgx {

PathoGenXP<Tensor> pathogenx_init(Rng& rng, const ModelDims& dims) {
    if (dims.d == 0 || dims.d_in == 0 || dims.d_g == 0 || dims.hidden == 0) {
        throw ValidationError("model dimensions must be positive");
    }
    PathoGenXP<Tensor> p;
    p.input_embed = linear_init(rng, dims.d_in, dims.d);
    p.class_token = Tensor({1, dims.d});
    for (std::size_t i = 0; i < dims.d; ++i) p.class_token[i] = 0.02 * rng.normal();
    p.msa1 = msa_init(rng, dims.d, dims.heads);
    p.ln1 = layer_norm_init(dims.d);
    p.ppeg = ppeg_init(rng, dims.d);
    p.msa2 = msa_init(rng, dims.d, dims.heads);
    p.ln2 = layer_norm_init(dims.d);
    p.genomic_projection = linear_init(rng, dims.d_g, dims.d);
    p.decoder_msa = msa_init(rng, dims.d, dims.heads);
    p.decoder_ln = layer_norm_init(dims.d);
    p.decoder_out = linear_init(rng, dims.d, dims.d);
    const std::size_t head_dims[3] = {dims.d, dims.hidden, 1};
    p.risk_head = mlp_init(rng, head_dims);
    return p;
}

PathoGenXP<Var> bind(Tape& t, const PathoGenXP<Tensor>& p) {
    PathoGenXP<Var> v;
    v.input_embed = bind(t, p.input_embed);
    v.class_token = t.leaf(p.class_token);
    v.msa1 = bind(t, p.msa1);
    v.ln1 = bind(t, p.ln1);
    v.ppeg = bind(t, p.ppeg);
    v.msa2 = bind(t, p.msa2);
    v.ln2 = bind(t, p.ln2);
    v.genomic_projection = bind(t, p.genomic_projection);
    v.decoder_msa = bind(t, p.decoder_msa);
    v.decoder_ln = bind(t, p.decoder_ln);
    v.decoder_out = bind(t, p.decoder_out);
    v.risk_head = bind(t, p.risk_head);
    return v;
}

namespace {

// One residual attention block: LN(MSA(x)) + x.
Var attention_block(Tape& t, const MSAP<Var>& msa, const LayerNormP<Var>& ln, Var x) {
    return t.add(layer_norm_forward(t, ln, msa_forward(t, msa, x)), x);
}

}  // namespace

Var encode_pathology(Tape& t, const PathoGenXP<Var>& p, Var bag) {
    Var embedded = linear_forward(t, p.input_embed, bag);
    Var p0 = t.concat_rows(p.class_token, embedded);
    Var p1 = attention_block(t, p.msa1, p.ln1, p0);
    Var p2 = ppeg_forward(t, p.ppeg, p1);
    return attention_block(t, p.msa2, p.ln2, p2);
}

Var project_genomic(Tape& t, const PathoGenXP<Var>& p, Var g0) {
    return linear_forward(t, p.genomic_projection, g0);
}

Var decode_to_genomic(Tape& t, const PathoGenXP<Var>& p, Var p_l) {
    Var z = attention_block(t, p.decoder_msa, p.decoder_ln, p_l);
    return linear_forward(t, p.decoder_out, t.slice_rows(z, 0, 1));
}

Var predict_risk(Tape& t, const PathoGenXP<Var>& p, Var features) {
    return mlp_forward(t, p.risk_head, features);
}

ForwardArtifacts forward_train(Tape& t, const PathoGenXP<Var>& p, Var bag, Var g0,
                               RiskInput risk_input) {
    Var p_l = encode_pathology(t, p, bag);
    Var cls = t.slice_rows(p_l, 0, 1);
    Var g_l = project_genomic(t, p, g0);
    Var g_l_hat = decode_to_genomic(t, p, p_l);
    Var features = risk_input == RiskInput::kTranslated ? g_l_hat : cls;
    return {cls, g_l, g_l_hat, predict_risk(t, p, features)};
}

Var forward_test(Tape& t, const PathoGenXP<Var>& p, Var bag, RiskInput risk_input) {
    Var p_l = encode_pathology(t, p, bag);
    Var g_l_hat = decode_to_genomic(t, p, p_l);
    Var features = risk_input == RiskInput::kTranslated ? g_l_hat : t.slice_rows(p_l, 0, 1);
    return predict_risk(t, p, features);
}

}  // namespace pgx
