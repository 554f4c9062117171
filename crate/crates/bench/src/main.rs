fn main() {
    env_logger::init();
    std::process::exit(hpcio_bench::cli_main(std::env::args_os()));
}
