fn main() {
    std::process::exit(mvpconv_cli::run_command(std::env::args_os()));
}
