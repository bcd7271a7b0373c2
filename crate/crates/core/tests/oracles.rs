#[path = "support/oracles.rs"]
mod oracles;

macro_rules! oracle_tests {
    ($($name:ident),+ $(,)?) => {
        $(
            #[test]
            fn $name() {
                if let Err(e) = oracles::$name() {
                    panic!("{e}");
                }
            }
        )+
    };
}

oracle_tests!(
    gaussian_spot_localization_matches_closed_form,
    gradient_matches_central_differences,
    adjoint_identity,
    half_aperture_fields_add_coherently,
    container_roundtrips_are_bit_exact,
    fixed_seed_pipeline_is_byte_identical,
    stamped_hash_matches_config,
    channel_gains_recovered_as_weight_ratio,
);
