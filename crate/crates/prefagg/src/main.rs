fn main() {
    std::process::exit(prefagg::run_command(std::env::args_os()));
}
