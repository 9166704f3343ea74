fn main() {
    std::process::exit(ftl_wave::app::run(std::env::args_os()));
}
