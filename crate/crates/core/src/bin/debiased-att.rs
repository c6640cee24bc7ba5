fn main() {
    std::process::exit(debiased_att::cli::run(std::env::args_os()));
}
